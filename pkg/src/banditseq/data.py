"""Corpora: synthetic cipher tasks, text ingestion, vocabularies, splits.

The synthetic task is a substitution cipher with local reordering: each
source token is mapped through a fixed random bijection, then every
consecutive window of `reorder_window` tokens is reversed. The task is
deliberately easy enough for supervised training to master and systematic
enough that a weakly trained model leaves headroom for online
improvement.

Real text enters through paired line-aligned files; everything downstream
works on token ids only.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .diffcore import seeded_rng
from .errors import ContractViolation
from .seq2seq import EOS, UNK

MAX_LEN = 50

SPLITS = ("supervised", "bandit", "dev", "test")
DEFAULT_FRACTIONS = (0.60, 0.25, 0.075, 0.075)

RESERVED_TOKENS = ("<eos>", "<bos>", "<unk>")


class Vocab:
    """Token string <-> id bijection with fixed reserved entries.

    Ids 0, 1, 2 are end-of-sequence, sequence start, and unknown; content
    tokens follow in construction order.
    """

    def __init__(self, tokens=()):
        self._tokens = list(RESERVED_TOKENS)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            if not t or t != t.strip() or any(ch.isspace() for ch in t):
                raise ContractViolation(f"bad vocabulary token {t!r}")
            if t in self._ids:
                raise ContractViolation(f"duplicate vocabulary token {t!r}")
            self._ids[t] = len(self._tokens)
            self._tokens.append(t)

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def encode(self, tokens) -> tuple:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids) -> list:
        return [self._tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:3]) != RESERVED_TOKENS:
            raise ContractViolation(f"{path}: reserved tokens missing or reordered")
        return cls(lines[3:])


@dataclass(frozen=True)
class SentencePair:
    source: tuple  # token ids, 1..50 of them
    target: tuple  # token ids ending with EOS
    split: str = "supervised"

    def __post_init__(self):
        if not self.source or not self.target:
            raise ContractViolation("sentence pair with an empty side")
        if len(self.source) > MAX_LEN or len(self.target) > MAX_LEN + 1:
            raise ContractViolation("sentence pair exceeds the length limit")
        if self.target[-1] != EOS:
            raise ContractViolation("target does not end with the end token")
        if self.split not in SPLITS:
            raise ContractViolation(f"unknown split {self.split!r}")


@dataclass
class Corpus:
    pairs: list
    src_vocab: Vocab
    tgt_vocab: Vocab
    meta: dict = field(default_factory=dict)
    dropped: int = 0

    def split(self, label: str) -> list:
        if label not in SPLITS:
            raise ContractViolation(f"unknown split {label!r}")
        return [p for p in self.pairs if p.split == label]

    def split_counts(self) -> dict:
        counts = {s: 0 for s in SPLITS}
        for p in self.pairs:
            counts[p.split] += 1
        return counts


def _reorder(tokens: list, window: int) -> list:
    """Reverse each consecutive window; self-inverse, identity at window 1."""
    out = []
    for i in range(0, len(tokens), window):
        out.extend(reversed(tokens[i:i + window]))
    return out


def gen_cipher_corpus(vocab_size: int, length_range, pair_count: int,
                      reorder_window: int = 1, seed: int = 0,
                      fractions=DEFAULT_FRACTIONS,
                      bandit_overlap: float = 0.0) -> Corpus:
    """Deterministic synthetic parallel corpus over `vocab_size` tokens.

    Sources are uniform random sequences of the non-reserved tokens (ids
    3 and up), deduplicated so every pair has a distinct source; targets
    are the cipher image. Splits are assigned by `split_corpus`.

    `bandit_overlap` is the fraction of the bandit split whose pairs are
    replaced by copies of (distinct) supervised-split pairs, modeling an
    online stream that mostly revisits material already seen during
    supervised training. Dev and test stay disjoint from everything.
    """
    lo, hi = int(length_range[0]), int(length_range[1])
    if vocab_size < 4:
        raise ContractViolation(f"vocab_size {vocab_size} leaves no content tokens")
    if not 1 <= lo <= hi <= MAX_LEN:
        raise ContractViolation(f"length range [{lo}, {hi}] outside [1, {MAX_LEN}]")
    if reorder_window < 1:
        raise ContractViolation(f"reorder_window must be >= 1, got {reorder_window}")
    if pair_count < 1:
        raise ContractViolation("pair_count must be positive")

    n_content = vocab_size - 3
    rng = seeded_rng(seed)
    perm = rng.fork("cipher").permutation(n_content)
    cipher = {3 + i: 3 + int(perm[i]) for i in range(n_content)}

    gen = rng.fork("sentences")
    seen = set()
    sources = []
    attempts = 0
    while len(sources) < pair_count:
        attempts += 1
        if attempts > 50 * pair_count:
            raise ContractViolation(
                "could not draw enough distinct sources; "
                "vocabulary or length range too small for pair_count")
        length = int(gen.integers(lo, hi + 1))
        src = tuple(3 + int(t) for t in gen.integers(0, n_content, size=length))
        if src in seen:
            continue
        seen.add(src)
        sources.append(src)

    pairs = []
    for src in sources:
        tgt = _reorder([cipher[t] for t in src], reorder_window)
        pairs.append(SentencePair(src, tuple(tgt) + (EOS,)))

    vocab = Vocab([f"w{i}" for i in range(3, vocab_size)])
    corpus = Corpus(pairs, vocab, vocab, meta={
        "kind": "cipher",
        "seed": seed,
        "vocab_size": vocab_size,
        "length_range": [lo, hi],
        "reorder_window": reorder_window,
        "bandit_overlap": float(bandit_overlap),
        "cipher": {str(k): v for k, v in cipher.items()},
    })
    corpus = split_corpus(corpus, fractions, seed)
    if bandit_overlap:
        corpus = _overlay_bandit_split(corpus, bandit_overlap, rng.fork("overlap"))
    return corpus


def _overlay_bandit_split(corpus: Corpus, fraction: float, rng) -> Corpus:
    """Replace a fraction of bandit pairs with distinct supervised pairs."""
    if not 0.0 <= fraction <= 1.0:
        raise ContractViolation(f"bandit_overlap {fraction} outside [0, 1]")
    sup_idx = [i for i, p in enumerate(corpus.pairs) if p.split == "supervised"]
    ban_idx = [i for i, p in enumerate(corpus.pairs) if p.split == "bandit"]
    count = round(fraction * len(ban_idx))
    if count > len(sup_idx):
        raise ContractViolation(
            f"bandit_overlap {fraction} needs {count} supervised donors, "
            f"have {len(sup_idx)}")
    donors = rng.permutation(len(sup_idx))[:count]
    recipients = rng.permutation(len(ban_idx))[:count]
    pairs = list(corpus.pairs)
    for d, r in zip(donors, recipients):
        donor = pairs[sup_idx[int(d)]]
        pairs[ban_idx[int(r)]] = replace(donor, split="bandit")
    return Corpus(pairs, corpus.src_vocab, corpus.tgt_vocab,
                  dict(corpus.meta), corpus.dropped)


def decode_cipher(corpus: Corpus, target_ids) -> list:
    """Invert a cipher corpus target (drop EOS, un-reorder, un-substitute)."""
    inverse = {v: int(k) for k, v in corpus.meta["cipher"].items()}
    window = corpus.meta["reorder_window"]
    body = [t for t in target_ids if t != EOS]
    return [inverse[t] for t in _reorder(body, window)]


def split_corpus(corpus: Corpus, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> Corpus:
    """Assign split labels by seeded shuffle, quotas within one of f*N.

    Quotas are floor(f*N) plus one extra for the largest fractional
    remainders (ties to the earlier split) until the total is N.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLITS):
        raise ContractViolation(f"need {len(SPLITS)} fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ContractViolation("negative split fraction")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractViolation(f"split fractions sum to {sum(fractions)}, not 1")

    n = len(corpus.pairs)
    quotas = [int(f * n) for f in fractions]
    remainders = [f * n - q for f, q in zip(fractions, quotas)]
    for i in sorted(range(len(SPLITS)), key=lambda i: (-remainders[i], i)):
        if sum(quotas) == n:
            break
        quotas[i] += 1

    order = seeded_rng(seed).fork("split").permutation(n)
    label_of = {}
    pos = 0
    for split, quota in zip(SPLITS, quotas):
        for idx in order[pos:pos + quota]:
            label_of[int(idx)] = split
        pos += quota
    pairs = [replace(p, split=label_of[i]) for i, p in enumerate(corpus.pairs)]
    return Corpus(pairs, corpus.src_vocab, corpus.tgt_vocab,
                  dict(corpus.meta), corpus.dropped)


def build_vocab(sequences, cap: int) -> Vocab:
    """Frequency-ranked vocabulary, ties broken lexicographically."""
    counts = Counter()
    for seq in sequences:
        counts.update(seq)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, _ in ranked[:cap]])


def load_parallel_text(src_path, tgt_path, vocab_cap: int,
                       fractions=DEFAULT_FRACTIONS, seed: int = 0) -> Corpus:
    """Read a line-aligned pair of text files into an encoded corpus.

    Tokens are whitespace-separated. Pairs with an empty side or more
    than 50 tokens on either side are dropped (the count is kept on the
    corpus). Vocabularies are built from the surviving pairs, one per
    side, each capped at `vocab_cap` non-reserved entries.
    """
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ContractViolation(
            f"line count mismatch: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}")

    kept = []
    dropped = 0
    for s_line, t_line in zip(src_lines, tgt_lines):
        s_toks, t_toks = s_line.split(), t_line.split()
        if not s_toks or not t_toks or len(s_toks) > MAX_LEN or len(t_toks) > MAX_LEN:
            dropped += 1
            continue
        kept.append((s_toks, t_toks))

    src_vocab = build_vocab((s for s, _ in kept), vocab_cap)
    tgt_vocab = build_vocab((t for _, t in kept), vocab_cap)
    pairs = [SentencePair(src_vocab.encode(s), tgt_vocab.encode(t) + (EOS,))
             for s, t in kept]
    corpus = Corpus(pairs, src_vocab, tgt_vocab,
                    meta={"kind": "text", "src_path": str(src_path),
                          "tgt_path": str(tgt_path)},
                    dropped=dropped)
    return split_corpus(corpus, fractions, seed)


def save_corpus(corpus: Corpus, out_dir) -> None:
    """Write src/tgt text, both vocabularies, and a reproduction sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_lines, tgt_lines, splits = [], [], []
    for p in corpus.pairs:
        src_lines.append(" ".join(corpus.src_vocab.decode(p.source)))
        tgt_lines.append(" ".join(corpus.tgt_vocab.decode(p.target[:-1])))
        splits.append(p.split)
    (out / "src.txt").write_text("\n".join(src_lines) + "\n", encoding="utf-8")
    (out / "tgt.txt").write_text("\n".join(tgt_lines) + "\n", encoding="utf-8")
    corpus.src_vocab.save(out / "vocab.src.txt")
    corpus.tgt_vocab.save(out / "vocab.tgt.txt")
    sidecar = {"meta": corpus.meta, "splits": splits, "dropped": corpus.dropped}
    (out / "corpus.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True),
                                     encoding="utf-8")


def load_corpus(in_dir) -> Corpus:
    """Exact inverse of save_corpus."""
    src = Path(in_dir)
    sidecar = json.loads((src / "corpus.json").read_text(encoding="utf-8"))
    src_vocab = Vocab.load(src / "vocab.src.txt")
    tgt_vocab = Vocab.load(src / "vocab.tgt.txt")
    src_lines = (src / "src.txt").read_text(encoding="utf-8").splitlines()
    tgt_lines = (src / "tgt.txt").read_text(encoding="utf-8").splitlines()
    splits = sidecar["splits"]
    if not len(src_lines) == len(tgt_lines) == len(splits):
        raise ContractViolation(f"{in_dir}: corpus files disagree on pair count")
    pairs = [SentencePair(src_vocab.encode(s.split()),
                          tgt_vocab.encode(t.split()) + (EOS,), split)
             for s, t, split in zip(src_lines, tgt_lines, splits)]
    return Corpus(pairs, src_vocab, tgt_vocab, sidecar["meta"],
                  sidecar.get("dropped", 0))
