"""Simulated raters: perturbation models over the sentence-level score.

A rater is the expert score pushed through an ordered list of
perturbations. Three kinds are modeled:

* granularity: scores snap to a coarse scale with g+1 levels;
* variance: Gaussian rating noise whose spread follows a piecewise-linear
  fit of human rating variability (widest mid-scale, vanishing at the
  endpoints), scaled by lambda;
* skew: s -> s**rho, harsh above rho = 1, generous below.

Stochastic perturbations draw from a substream keyed by (noise_seed,
round index), so replaying a round reproduces its ratings exactly without
any shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .diffcore import RandomStream, seeded_rng
from .errors import ConfigError, ContractViolation
from .reward import sentence_bleu


@dataclass(frozen=True)
class Granular:
    """Round to the nearest multiple of 1/g, halves up."""

    g: int

    def __post_init__(self):
        if self.g < 1:
            raise ConfigError(f"granularity g must be >= 1, got {self.g}")


@dataclass(frozen=True)
class Variance:
    """Gaussian noise with variance lam * sigma(score)^2."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"variance scale must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class Skew:
    """Exponentiation s**rho."""

    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError(f"skew exponent must be > 0, got {self.rho}")


@dataclass(frozen=True)
class RaterConfig:
    """Ordered perturbation pipeline plus its noise seed.

    An empty pipeline is the unperturbed expert.
    """

    perturbations: tuple = field(default_factory=tuple)
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        for p in self.perturbations:
            if not isinstance(p, (Granular, Variance, Skew)):
                raise ConfigError(f"unknown perturbation {p!r}")

    def to_dict(self) -> dict:
        out = []
        for p in self.perturbations:
            if isinstance(p, Granular):
                out.append({"kind": "granular", "g": p.g})
            elif isinstance(p, Variance):
                out.append({"kind": "variance", "lam": p.lam})
            else:
                out.append({"kind": "skew", "rho": p.rho})
        return {"perturbations": out, "noise_seed": self.noise_seed}

    @classmethod
    def from_dict(cls, data: dict) -> "RaterConfig":
        perts = []
        for entry in data.get("perturbations", []):
            kind = entry.get("kind")
            if kind == "granular":
                perts.append(Granular(int(entry["g"])))
            elif kind == "variance":
                perts.append(Variance(float(entry["lam"])))
            elif kind == "skew":
                perts.append(Skew(float(entry["rho"])))
            else:
                raise ConfigError(f"unknown perturbation kind {kind!r}")
        return cls(tuple(perts), int(data.get("noise_seed", 0)))


def pert_gran(s: float, g: int) -> float:
    """Snap s to the g+1 levels {0, 1/g, ..., 1}, rounding halves up."""
    if not 0.0 <= s <= 1.0:
        raise ContractViolation(f"score {s} outside [0, 1]")
    return math.floor(g * s + 0.5) / g


def sigma(s: float) -> float:
    """Rating standard deviation on the 0-100 scale, piecewise linear in s."""
    raw = 0.64 * s - 0.02 if s < 50.0 else -0.67 * s + 67.0
    return max(raw, 0.0)


def pert_var(s: float, lam: float, rng: RandomStream) -> float:
    """Gaussian noise around s with variance lam * sigma^2, clamped to [0,1].

    sigma is fitted on the 0-100 rating scale, so the score is mapped up,
    perturbed, and mapped back.
    """
    if lam == 0.0:
        return s
    u = 100.0 * s
    drawn = rng.normal(loc=u, scale=math.sqrt(lam) * sigma(u))
    return min(max(drawn / 100.0, 0.0), 1.0)


def pert_skew(s: float, rho: float) -> float:
    return s ** rho


def rate(hyp, ref, config: RaterConfig, round_index: int) -> float:
    """Scalar rating for one hypothesis: expert score, then perturbations.

    Stochastic perturbations consume fork(noise_seed, round_index), so the
    rating is a pure function of (hyp, ref, config, round_index).
    """
    s = sentence_bleu(hyp, ref).score
    rng = None
    for p in config.perturbations:
        if isinstance(p, Granular):
            s = pert_gran(s, p.g)
        elif isinstance(p, Variance):
            if rng is None:
                rng = seeded_rng(config.noise_seed).fork("rate", round_index)
            s = pert_var(s, p.lam, rng)
        else:
            s = pert_skew(s, p.rho)
    return s
