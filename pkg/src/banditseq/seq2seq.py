"""Attention-based encoder-decoder over token ids.

One unidirectional LSTM reads the source; a second LSTM generates the
target, attending over encoder states with bilinear scores and feeding
its own output vector back in as part of the next input (so the
recurrence sees what was actually emitted, not just the raw hidden
state). Two interchangeable heads sit on the output vector: a softmax
over the target vocabulary (the translation policy) and a single linear
scalar (the value estimate used to center rewards during bandit
training).

Every computation exists twice, deliberately:

* a graph path that builds autodiff nodes for training, and
* a fast path in plain numpy for sampling, greedy decoding, and scoring.

The two are pinned against each other by equivalence tests; keep any
change mirrored.

Token id conventions: 0 is end-of-sequence, 1 is the decoder start
symbol, 2 is the unknown-word placeholder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractViolation

EOS = 0
BOS = 1
UNK = 2

MAX_SOURCE_LEN = 50

HEAD_SOFTMAX = "softmax_vocab"
HEAD_SCALAR = "scalar_value"


@dataclass(frozen=True)
class Seq2SeqConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    max_decode_len: int = 64
    head: str = HEAD_SOFTMAX

    def __post_init__(self):
        for name in ("src_vocab_size", "tgt_vocab_size", "embed_dim",
                     "hidden_dim", "max_decode_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ContractViolation(f"{name} must be a positive integer, got {v!r}")
        if self.head not in (HEAD_SOFTMAX, HEAD_SCALAR):
            raise ContractViolation(f"unknown head {self.head!r}")


@dataclass
class DecoderState:
    """Everything the decoder carries between steps."""

    h: np.ndarray        # LSTM hidden
    c: np.ndarray        # LSTM cell
    h_tilde: np.ndarray  # previous output vector, fed into the next input
    memory: np.ndarray   # encoder states, one row per source token
    attn_weights: np.ndarray | None = None  # weights of the step that made this


@dataclass
class SampledTranslation:
    """One ancestral sample and the evidence needed to replay it."""

    tokens: list          # ends with EOS or is max_len long
    log_probs: list       # log-prob actually assigned to each drawn token
    states: list          # DecoderState before each step (prefix states)

    @property
    def total_log_prob(self) -> float:
        return float(sum(self.log_probs))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class TeacherForcedRun:
    """Graph-path walk of a fixed target sequence.

    Holds one autodiff node per step: the log-probability assigned to
    that step's token (softmax head) or the scalar value of the prefix
    before the token (scalar head). `total_log_prob` sums the former.
    """

    def __init__(self, step_log_probs, values, h_tildes):
        self.step_log_probs = step_log_probs
        self.values = values
        self.h_tildes = h_tildes

    @property
    def total_log_prob(self):
        return dc.add_n(self.step_log_probs)


class Seq2SeqModel:
    """Configured architecture; parameters live in a separate ParamStore."""

    def __init__(self, config: Seq2SeqConfig):
        self.config = config

    # -- parameters ---------------------------------------------------------

    def init_params(self, rng: dc.RandomStream) -> dc.ParamStore:
        """Fresh weights, uniform in [-0.1, 0.1]; biases 0, forget gates 1."""
        cfg = self.config
        e, h = cfg.embed_dim, cfg.hidden_dim
        store = dc.ParamStore()

        def w(name, shape):
            store.add(name, rng.uniform(-0.1, 0.1, size=shape))

        w("enc_embed", (cfg.src_vocab_size, e))
        w("enc_wih", (4 * h, e))
        w("enc_whh", (4 * h, h))
        store.add("enc_b", _lstm_bias(h))
        w("dec_embed", (cfg.tgt_vocab_size, e))
        w("dec_wih", (4 * h, h + e))
        w("dec_whh", (4 * h, h))
        store.add("dec_b", _lstm_bias(h))
        w("attn_w", (h, h))
        w("out_w", (h, 2 * h))
        store.add("out_b", np.zeros(h))
        if cfg.head == HEAD_SOFTMAX:
            w("head_w", (cfg.tgt_vocab_size, h))
            store.add("head_b", np.zeros(cfg.tgt_vocab_size))
        else:
            w("value_w", (h,))
        return store

    # -- fast path (no gradients) -------------------------------------------

    def _check_source(self, x) -> list:
        x = [int(t) for t in x]
        if not x:
            raise ContractViolation("empty source sentence")
        if len(x) > MAX_SOURCE_LEN:
            raise ContractViolation(f"source length {len(x)} exceeds {MAX_SOURCE_LEN}")
        for t in x:
            if not 0 <= t < self.config.src_vocab_size:
                raise ContractViolation(f"source token id {t} out of range")
        return x

    def _fast_lstm_step(self, prefix, store, inp, h, c):
        gates = store[prefix + "_wih"] @ inp + store[prefix + "_whh"] @ h \
            + store[prefix + "_b"]
        hd = self.config.hidden_dim
        i = _sigmoid(gates[:hd])
        f = _sigmoid(gates[hd:2 * hd])
        g = np.tanh(gates[2 * hd:3 * hd])
        o = _sigmoid(gates[3 * hd:])
        c2 = f * c + i * g
        return o * np.tanh(c2), c2

    def encode(self, store: dc.ParamStore, x) -> tuple[np.ndarray, np.ndarray]:
        """Run the encoder; returns (memory matrix, final hidden state)."""
        x = self._check_source(x)
        hd = self.config.hidden_dim
        h = np.zeros(hd)
        c = np.zeros(hd)
        memory = np.empty((len(x), hd))
        emb = store["enc_embed"]
        for i, tok in enumerate(x):
            h, c = self._fast_lstm_step("enc", store, emb[tok], h, c)
            memory[i] = h
        return memory, h

    def initial_state(self, store: dc.ParamStore, x) -> DecoderState:
        memory, phi = self.encode(store, x)
        hd = self.config.hidden_dim
        return DecoderState(h=phi, c=np.zeros(hd), h_tilde=np.zeros(hd),
                            memory=memory)

    def decode_step(self, store: dc.ParamStore, state: DecoderState,
                    prev_token: int):
        """One decoder step; returns (head output, next state).

        Head output is a probability vector over the target vocabulary
        for the softmax head, or a float value estimate for the scalar
        head.
        """
        cfg = self.config
        if not 0 <= prev_token < cfg.tgt_vocab_size:
            raise ContractViolation(f"target token id {prev_token} out of range")
        inp = np.concatenate([state.h_tilde, store["dec_embed"][prev_token]])
        h2, c2 = self._fast_lstm_step("dec", store, inp, state.h, state.c)
        scores = state.memory @ (store["attn_w"].T @ h2)
        weights = dc.softmax_values(scores)
        ctx = state.memory.T @ weights
        h_tilde = np.tanh(store["out_w"] @ np.concatenate([h2, ctx]) + store["out_b"])
        nxt = DecoderState(h=h2, c=c2, h_tilde=h_tilde, memory=state.memory,
                           attn_weights=weights)
        if cfg.head == HEAD_SOFTMAX:
            return dc.softmax_values(store["head_w"] @ h_tilde + store["head_b"]), nxt
        return float(store["value_w"] @ h_tilde), nxt

    def _check_target(self, y, require_eos: bool = True) -> list:
        y = [int(t) for t in y]
        if not y:
            raise ContractViolation("empty target sequence")
        if require_eos and y[-1] != EOS:
            raise ContractViolation("target must end with the end-of-sequence token")
        for t in y:
            if not 0 <= t < self.config.tgt_vocab_size:
                raise ContractViolation(f"target token id {t} out of range")
        return y

    def sequence_log_prob(self, store: dc.ParamStore, x, y) -> float:
        """Teacher-forced log P(y | x); y must end with EOS."""
        y = self._check_target(y)
        state = self.initial_state(store, x)
        prev = BOS
        total = 0.0
        for tok in y:
            probs, state = self.decode_step(store, state, prev)
            total += float(np.log(probs[tok]))
            prev = tok
        return total

    def _effective_max_len(self, x, max_len) -> int:
        if max_len is None:
            max_len = 2 * len(x) + 5
        return min(int(max_len), self.config.max_decode_len)

    def sample(self, store: dc.ParamStore, x, rng: dc.RandomStream,
               max_len: int | None = None) -> SampledTranslation:
        """Ancestral sample from the policy; stops at EOS or max_len."""
        limit = self._effective_max_len(x, max_len)
        state = self.initial_state(store, x)
        prev = BOS
        tokens, log_probs, states = [], [], []
        for _ in range(limit):
            states.append(state)
            probs, state = self.decode_step(store, state, prev)
            tok = rng.categorical(probs)
            tokens.append(tok)
            log_probs.append(float(np.log(probs[tok])))
            prev = tok
            if tok == EOS:
                break
        return SampledTranslation(tokens, log_probs, states)

    def greedy_decode(self, store: dc.ParamStore, x,
                      max_len: int | None = None) -> list:
        """Deterministic argmax decoding; ties go to the lowest token id."""
        limit = self._effective_max_len(x, max_len)
        state = self.initial_state(store, x)
        prev = BOS
        tokens = []
        for _ in range(limit):
            probs, state = self.decode_step(store, state, prev)
            tok = int(np.argmax(probs))  # argmax returns the first maximum
            tokens.append(tok)
            prev = tok
            if tok == EOS:
                break
        return tokens

    # -- graph path (training) ----------------------------------------------

    def _graph_encode(self, nodes: dict, x: list):
        hd = self.config.hidden_dim
        h = dc.constant(np.zeros(hd))
        c = dc.constant(np.zeros(hd))
        rows = []
        for tok in x:
            emb = dc.row(nodes["enc_embed"], tok)
            gates = dc.lstm_gates(emb, h, nodes["enc_wih"], nodes["enc_whh"],
                                  nodes["enc_b"])
            c = dc.lstm_c(gates, c)
            h = dc.lstm_h(gates, c)
            rows.append(h)
        return dc.stack_rows(rows), h

    def _graph_decode_step(self, nodes: dict, memory, h, c, h_tilde, prev_token):
        inp = dc.concat([h_tilde, dc.row(nodes["dec_embed"], prev_token)])
        gates = dc.lstm_gates(inp, h, nodes["dec_wih"], nodes["dec_whh"],
                              nodes["dec_b"])
        c2 = dc.lstm_c(gates, c)
        h2 = dc.lstm_h(gates, c2)
        ctx = dc.attend(memory, h2, nodes["attn_w"])
        pre = dc.add(dc.matmul(nodes["out_w"], dc.concat([h2, ctx])),
                     nodes["out_b"])
        return h2, c2, dc.tanh(pre)

    def teacher_forced_nodes(self, store: dc.ParamStore, x, y,
                             require_eos: bool = True) -> TeacherForcedRun:
        """Build the training graph for a fixed target sequence.

        For the softmax head, `step_log_probs[t]` is the log-probability
        node of y[t] given the true prefix. For the scalar head,
        `values[t]` is the value node of the prefix before y[t]; the
        final token (EOS) still gets a value, matching one value per
        emitted token. Sampled sequences truncated before EOS pass
        `require_eos=False`.
        """
        x = self._check_source(x)
        y = self._check_target(y, require_eos)
        nodes = store.nodes()
        memory, phi = self._graph_encode(nodes, x)
        hd = self.config.hidden_dim
        h, c = phi, dc.constant(np.zeros(hd))
        h_tilde = dc.constant(np.zeros(hd))
        prev = BOS
        step_log_probs, values, h_tildes = [], [], []
        softmax_head = self.config.head == HEAD_SOFTMAX
        for tok in y:
            h, c, h_tilde = self._graph_decode_step(nodes, memory, h, c,
                                                    h_tilde, prev)
            h_tildes.append(h_tilde)
            if softmax_head:
                logits = dc.add(dc.matmul(nodes["head_w"], h_tilde),
                                nodes["head_b"])
                step_log_probs.append(dc.pick(dc.log_softmax(logits), tok))
            else:
                values.append(dc.matmul(nodes["value_w"], h_tilde))
            prev = tok
        return TeacherForcedRun(step_log_probs, values, h_tildes)

    def sequence_log_prob_node(self, store: dc.ParamStore, x, y):
        """Scalar graph node for log P(y | x); backward trains by MLE."""
        return self.teacher_forced_nodes(store, x, y).total_log_prob


def _lstm_bias(hidden_dim: int) -> np.ndarray:
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = 1.0  # forget gate starts open
    return b


def param_count(config: Seq2SeqConfig) -> int:
    """Closed-form size of init_params' store, for sanity checks."""
    e, h = config.embed_dim, config.hidden_dim
    vs, vt = config.src_vocab_size, config.tgt_vocab_size
    n = vs * e + 4 * h * e + 4 * h * h + 4 * h        # encoder
    n += vt * e + 4 * h * (h + e) + 4 * h * h + 4 * h  # decoder
    n += h * h                                         # attention
    n += 2 * h * h + h                                 # output vector
    if config.head == HEAD_SOFTMAX:
        n += vt * h + vt
    else:
        n += h
    return n
