"""banditseq: bandit machine-translation training with simulated raters.

A small attention-based encoder-decoder is pre-trained by maximum
likelihood, then improved online with an advantage actor-critic update
driven only by scalar ratings of its sampled translations. The ratings
come from a simulated rater: smoothed sentence-level BLEU passed through
configurable granularity, variance, and skew perturbations.
"""

__version__ = "0.1.0"
