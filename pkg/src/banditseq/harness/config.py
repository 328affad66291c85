"""Experiment configuration: a validated, JSON-round-trippable description
of one training-and-measurement run, plus the built-in preset library.

Schema (all keys required unless marked optional; unknown keys rejected):

    {
      "preset":   str label, free-form,
      "task": {
        "kind": "cipher" | "text",
        cipher: "vocab_size" int, "length_range" [lo, hi], "pair_count" int,
                "reorder_window" int, "corpus_seed" int, "bandit_overlap" float,
        text:   "src_path" str, "tgt_path" str, "vocab_cap" int,
        both:   "fractions" [sup, bandit, dev, test] summing to 1
      },
      "model":    {"embed_dim" int, "hidden_dim" int, "max_decode_len" int},
      "pretrain": {"epochs" int >= 0, "batch_size" int, "alpha" float,
                   "clip_norm" float or null},
      "critic_pretrain": same shape as "pretrain",
      "bandit":   same shape ("epochs" is the number of bandit passes),
      "rater":    {"perturbations": [...], "noise_seed" int}  (rater schema),
      "seeds":    [int, ...] nonempty,
      "baseline": "none" | "supervised",
      "out_dir":  str,
      "cache_dir": str or null (optional; default <out_dir>/checkpoints),
      "workers":  int >= 1 (optional)
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..bandit import TrainConfig
from ..data import gen_cipher_corpus, load_parallel_text
from ..errors import ConfigError
from ..rater import Granular, RaterConfig, Skew, Variance

# Desk-scale defaults; everything below is sized to run in seconds to
# minutes on one core while leaving each pre-training depth at a distinct
# operating point (weak ~0.2, medium ~0.6, full ~0.9 sampled BLEU).
# Split fractions follow the reference corpora's proportions, which put
# most pairs in the supervised and bandit splits; the 900-round bandit
# pass this yields is what gives one-pass deltas a readable signal on
# five seeds.
DESK_VOCAB = 20
DESK_LENGTHS = (4, 14)
DESK_PAIRS = 2000
DESK_WINDOW = 2
DESK_CORPUS_SEED = 7
DESK_OVERLAP = 0.95
DESK_FRACTIONS = (0.50, 0.45, 0.025, 0.025)
DESK_SEEDS = (0, 1, 2, 3, 4)
DESK_NOISE_SEED = 11

WEAK_PRETRAIN = TrainConfig(epochs=1, batch_size=1, alpha=1e-2)
MEDIUM_PRETRAIN = TrainConfig(epochs=2, batch_size=1, alpha=1e-2)
FULL_PRETRAIN = TrainConfig(epochs=10, batch_size=16, alpha=1e-2)
CRITIC_PRETRAIN = TrainConfig(epochs=5, batch_size=16, alpha=2e-3)
DESK_BANDIT = TrainConfig(epochs=1, batch_size=4, alpha=1e-3)

GRAN_SWEEP = tuple(range(1, 11))
VAR_SWEEP = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
SKEW_SWEEP = (0.25, 0.5, 0.67, 1.0, 1.5, 2.0, 4.0)


@dataclass(frozen=True)
class TaskSpec:
    """What corpus to train on: a generated cipher task or text files."""

    kind: str = "cipher"
    vocab_size: int = DESK_VOCAB
    length_range: tuple = DESK_LENGTHS
    pair_count: int = DESK_PAIRS
    reorder_window: int = DESK_WINDOW
    corpus_seed: int = DESK_CORPUS_SEED
    bandit_overlap: float = DESK_OVERLAP
    fractions: tuple = DESK_FRACTIONS
    src_path: str | None = None
    tgt_path: str | None = None
    vocab_cap: int = 10000

    def __post_init__(self):
        if self.kind not in ("cipher", "text"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "text" and not (self.src_path and self.tgt_path):
            raise ConfigError("text task requires src_path and tgt_path")
        object.__setattr__(self, "length_range", tuple(self.length_range))
        object.__setattr__(self, "fractions", tuple(self.fractions))

    def build(self):
        if self.kind == "cipher":
            return gen_cipher_corpus(
                self.vocab_size, self.length_range, self.pair_count,
                reorder_window=self.reorder_window, seed=self.corpus_seed,
                fractions=self.fractions, bandit_overlap=self.bandit_overlap)
        return load_parallel_text(self.src_path, self.tgt_path,
                                  self.vocab_cap, fractions=self.fractions,
                                  seed=self.corpus_seed)

    def to_dict(self) -> dict:
        if self.kind == "cipher":
            return {"kind": "cipher", "vocab_size": self.vocab_size,
                    "length_range": list(self.length_range),
                    "pair_count": self.pair_count,
                    "reorder_window": self.reorder_window,
                    "corpus_seed": self.corpus_seed,
                    "bandit_overlap": self.bandit_overlap,
                    "fractions": list(self.fractions)}
        return {"kind": "text", "src_path": self.src_path,
                "tgt_path": self.tgt_path, "vocab_cap": self.vocab_cap,
                "corpus_seed": self.corpus_seed,
                "fractions": list(self.fractions)}


@dataclass(frozen=True)
class ModelSpec:
    embed_dim: int = 32
    hidden_dim: int = 32
    max_decode_len: int = 105

    def to_dict(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim,
                "max_decode_len": self.max_decode_len}


def _train_to_dict(tc: TrainConfig) -> dict:
    return {"epochs": tc.epochs, "batch_size": tc.batch_size,
            "alpha": tc.alpha, "clip_norm": tc.clip_norm}


def _train_from_dict(d: dict, where: str) -> TrainConfig:
    _expect_keys(d, {"epochs", "batch_size", "alpha", "clip_norm"}, where,
                 optional={"clip_norm"})
    try:
        return TrainConfig(epochs=int(d["epochs"]),
                           batch_size=int(d["batch_size"]),
                           alpha=float(d["alpha"]),
                           clip_norm=d.get("clip_norm"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _expect_keys(d, allowed, where, optional=frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(allowed) - set(optional) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything run_experiment needs; validated on construction."""

    preset: str = "custom"
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    pretrain: TrainConfig = FULL_PRETRAIN
    critic_pretrain: TrainConfig = CRITIC_PRETRAIN
    bandit: TrainConfig = DESK_BANDIT
    rater: RaterConfig = field(default_factory=RaterConfig)
    seeds: tuple = DESK_SEEDS
    baseline: str = "none"
    out_dir: str = "runs"
    cache_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds in {self.seeds}")
        for name, tc in (("pretrain", self.pretrain),
                         ("critic_pretrain", self.critic_pretrain),
                         ("bandit", self.bandit)):
            if tc.epochs < 0:
                raise ConfigError(f"{name}.epochs must be >= 0, got {tc.epochs}")
        if self.baseline not in ("none", "supervised"):
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        return {"preset": self.preset,
                "task": self.task.to_dict(),
                "model": self.model.to_dict(),
                "pretrain": _train_to_dict(self.pretrain),
                "critic_pretrain": _train_to_dict(self.critic_pretrain),
                "bandit": _train_to_dict(self.bandit),
                "rater": self.rater.to_dict(),
                "seeds": list(self.seeds),
                "baseline": self.baseline,
                "out_dir": self.out_dir,
                "cache_dir": self.cache_dir,
                "workers": self.workers}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        _expect_keys(data, {"preset", "task", "model", "pretrain",
                            "critic_pretrain", "bandit", "rater", "seeds",
                            "baseline", "out_dir", "cache_dir", "workers"},
                     "config", optional={"cache_dir", "workers"})
        task_d = dict(data["task"])
        kind = task_d.get("kind", "cipher")
        if kind == "cipher":
            _expect_keys(task_d, {"kind", "vocab_size", "length_range",
                                  "pair_count", "reorder_window", "corpus_seed",
                                  "bandit_overlap", "fractions"}, "config.task")
            task = TaskSpec(kind="cipher",
                            vocab_size=int(task_d["vocab_size"]),
                            length_range=tuple(task_d["length_range"]),
                            pair_count=int(task_d["pair_count"]),
                            reorder_window=int(task_d["reorder_window"]),
                            corpus_seed=int(task_d["corpus_seed"]),
                            bandit_overlap=float(task_d["bandit_overlap"]),
                            fractions=tuple(task_d["fractions"]))
        else:
            _expect_keys(task_d, {"kind", "src_path", "tgt_path", "vocab_cap",
                                  "corpus_seed", "fractions"}, "config.task")
            task = TaskSpec(kind="text", src_path=task_d["src_path"],
                            tgt_path=task_d["tgt_path"],
                            vocab_cap=int(task_d["vocab_cap"]),
                            corpus_seed=int(task_d["corpus_seed"]),
                            fractions=tuple(task_d["fractions"]))
        model_d = data["model"]
        _expect_keys(model_d, {"embed_dim", "hidden_dim", "max_decode_len"},
                     "config.model")
        if not isinstance(data["seeds"], (list, tuple)):
            raise ConfigError("config.seeds must be a list")
        try:
            rater = RaterConfig.from_dict(data["rater"])
        except (ConfigError, KeyError, TypeError) as e:
            raise ConfigError(f"config.rater: {e}") from None
        return cls(preset=str(data["preset"]),
                   task=task,
                   model=ModelSpec(embed_dim=int(model_d["embed_dim"]),
                                   hidden_dim=int(model_d["hidden_dim"]),
                                   max_decode_len=int(model_d["max_decode_len"])),
                   pretrain=_train_from_dict(data["pretrain"], "config.pretrain"),
                   critic_pretrain=_train_from_dict(data["critic_pretrain"],
                                                    "config.critic_pretrain"),
                   bandit=_train_from_dict(data["bandit"], "config.bandit"),
                   rater=rater,
                   seeds=data["seeds"],
                   baseline=str(data["baseline"]),
                   out_dir=str(data["out_dir"]),
                   cache_dir=data.get("cache_dir"),
                   workers=int(data.get("workers", 1)))

    def canonical_json(self) -> str:
        """Stable serialization; the basis for experiment and cache ids."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True)
                          + "\n", encoding="utf-8")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: not valid JSON ({e})") from None
    return ExperimentConfig.from_dict(data)


def _desk(preset, pretrain, bandit=DESK_BANDIT, rater=None, baseline="none"):
    return ExperimentConfig(preset=preset, pretrain=pretrain, bandit=bandit,
                            rater=rater or RaterConfig(), baseline=baseline)


def _fmt(x: float) -> str:
    return f"{x:g}"


def build_presets() -> dict:
    """The experiment library; keys are accepted by the CLI and tests.

    table2-desk*   one unperturbed bandit pass against full/weak references,
                   with a one-pass supervised baseline for comparison.
    fig3-desk      five bandit passes against the weak reference.
    fig4-*         perturbation sweeps against the medium reference, whose
                   sampled score sits mid-scale where the rating pipeline
                   has the most room to distort.
    smoke          seconds-scale configuration for demos and plumbing tests.
    """
    presets = {
        "table2-desk": _desk("table2-desk", FULL_PRETRAIN,
                             baseline="supervised"),
        "table2-desk-weak": _desk("table2-desk-weak", WEAK_PRETRAIN,
                                  baseline="supervised"),
        "fig3-desk": _desk(
            "fig3-desk", WEAK_PRETRAIN,
            bandit=TrainConfig(epochs=5, batch_size=DESK_BANDIT.batch_size,
                               alpha=DESK_BANDIT.alpha)),
        "fig4-clean": _desk("fig4-clean", MEDIUM_PRETRAIN),
        "smoke": ExperimentConfig(
            preset="smoke",
            task=TaskSpec(vocab_size=8, length_range=(2, 5), pair_count=60,
                          reorder_window=1, corpus_seed=1, bandit_overlap=0.5),
            model=ModelSpec(embed_dim=8, hidden_dim=8, max_decode_len=20),
            pretrain=TrainConfig(epochs=1, batch_size=4, alpha=5e-3),
            critic_pretrain=TrainConfig(epochs=1, batch_size=4, alpha=2e-3),
            bandit=TrainConfig(epochs=1, batch_size=4, alpha=5e-4),
            seeds=(0, 1)),
    }
    for g in GRAN_SWEEP:
        presets[f"fig4-gran-g{g}"] = _desk(
            f"fig4-gran-g{g}", MEDIUM_PRETRAIN,
            rater=RaterConfig((Granular(g),), noise_seed=DESK_NOISE_SEED))
    for lam in VAR_SWEEP:
        presets[f"fig4-var-lam{_fmt(lam)}"] = _desk(
            f"fig4-var-lam{_fmt(lam)}", MEDIUM_PRETRAIN,
            rater=RaterConfig((Variance(lam),), noise_seed=DESK_NOISE_SEED))
    for rho in SKEW_SWEEP:
        presets[f"fig4-skew-rho{_fmt(rho)}"] = _desk(
            f"fig4-skew-rho{_fmt(rho)}", MEDIUM_PRETRAIN,
            rater=RaterConfig((Skew(rho),), noise_seed=DESK_NOISE_SEED))
    return presets


def get_preset(name: str) -> ExperimentConfig:
    presets = build_presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: "
                          + ", ".join(sorted(presets)))
    return presets[name]
