"""Run-level measurements: sampled per-sentence score, held-out corpus
score, deltas, and across-seed confidence intervals.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from ..errors import ContractViolation
from ..reward import corpus_bleu, sentence_bleu


def per_sentence_bleu_metric(model, store, pairs, rng, batch_size: int = 1) -> float:
    """Mean un-perturbed sentence score of one sampled pass over `pairs`.

    The pass consumes the same substreams as a training pass with the
    given batch size (order fork, then one round fork per batch, one
    sample fork per slot), so measuring a frozen model with the rng a
    training run is about to use yields a sample-for-sample paired
    reference for that run's first pass.
    """
    if not pairs:
        raise ContractViolation("per-sentence metric over an empty split")
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    order = rng.fork("order", 0).permutation(len(pairs))
    total = 0.0
    for start in range(0, len(order), batch_size):
        round_rng = rng.fork("round", 0, start)
        for j, idx in enumerate(order[start:start + batch_size]):
            pair = pairs[int(idx)]
            sample = model.sample(store, pair.source, round_rng.fork("sample", j))
            total += sentence_bleu(sample.tokens, pair.target).score
    return total / len(pairs)


def heldout_bleu_metric(model, store, pairs) -> float:
    """Corpus-level score of greedy decodes; deterministic in the model."""
    if not pairs:
        raise ContractViolation("held-out metric over an empty split")
    hyps = [model.greedy_decode(store, p.source) for p in pairs]
    return corpus_bleu(hyps, [p.target for p in pairs])


def delta_metric(after: float, before: float) -> float:
    """Plain difference; report alongside both operands."""
    return after - before


def confidence_interval(values) -> tuple:
    """(mean, half-width) of the Student-t 95% interval, sample sd.

    Two observations of {0, 1} give half-width 12.706 * 0.7071 / 1.4142
    = 6.353, the classic tiny-n blowup; callers wanting tight intervals
    need more seeds, not a different formula.
    """
    vals = np.asarray(list(values), dtype=float)
    if vals.size < 2:
        raise ContractViolation(
            f"confidence interval needs >= 2 values, got {vals.size}")
    mean = float(vals.mean())
    sd = float(vals.std(ddof=1))
    half = float(stats.t.ppf(0.975, vals.size - 1) * sd / np.sqrt(vals.size))
    return mean, half
