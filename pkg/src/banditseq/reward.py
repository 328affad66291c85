"""Sentence-level and corpus-level BLEU over token id sequences.

The sentence score is the per-example training reward. It smooths the
higher-order precisions (matches + 1 over candidates + 1 for n >= 2,
unigrams left raw) and adds one to both lengths inside the brevity
penalty, so short hypotheses still receive a graded signal instead of
collapsing to zero. The corpus score is conventional unsmoothed BLEU-4
over pooled counts and is only used for held-out evaluation.

Both operate on sequences of token ids; surface strings never enter.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import ContractViolation

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuBreakdown:
    """Per-order precisions and length terms behind one sentence score."""

    precisions: tuple  # p_1 .. p_4
    hyp_len: int
    ref_len: int
    brevity: float
    score: float


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(hyp, ref, n: int) -> tuple[int, int]:
    hyp_counts = _ngrams(hyp, n)
    if not hyp_counts:
        return 0, 0
    ref_counts = _ngrams(ref, n)
    matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return matched, sum(hyp_counts.values())


def sentence_bleu(hyp, ref) -> BleuBreakdown:
    """Smoothed BLEU-4 for a single hypothesis/reference pair.

    Unigram precision is unsmoothed; orders 2..4 use (matches + 1) /
    (candidates + 1). The brevity penalty compares hyp_len + 1 against
    ref_len + 1. An empty hypothesis scores 0; an empty reference is a
    caller bug.
    """
    hyp = list(hyp)
    ref = list(ref)
    if not ref:
        raise ContractViolation("sentence_bleu: empty reference")
    c, r = len(hyp), len(ref)
    if c == 0:
        return BleuBreakdown((0.0,) * MAX_ORDER, 0, r, 0.0, 0.0)

    precisions = []
    for n in range(1, MAX_ORDER + 1):
        matched, total = _clipped_matches(hyp, ref, n)
        if n == 1:
            precisions.append(matched / total)
        else:
            precisions.append((matched + 1.0) / (total + 1.0))

    brevity = 1.0 if c + 1 >= r + 1 else math.exp(1.0 - (r + 1.0) / (c + 1.0))
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = brevity * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuBreakdown(tuple(precisions), c, r, brevity, score)


def corpus_bleu(hyps, refs) -> float:
    """Standard unsmoothed BLEU-4 over pooled counts.

    Any order with zero pooled matches (or zero candidates) zeroes the
    score, per the usual log-space convention.
    """
    if len(hyps) != len(refs):
        raise ContractViolation(
            f"corpus_bleu: {len(hyps)} hypotheses vs {len(refs)} references")
    matched = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    c = r = 0
    for hyp, ref in zip(hyps, refs):
        hyp = list(hyp)
        ref = list(ref)
        if not ref:
            raise ContractViolation("corpus_bleu: empty reference")
        c += len(hyp)
        r += len(ref)
        for n in range(1, MAX_ORDER + 1):
            m, t = _clipped_matches(hyp, ref, n)
            matched[n - 1] += m
            total[n - 1] += t
    if c == 0 or any(m == 0 or t == 0 for m, t in zip(matched, total)):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / MAX_ORDER
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_p)
