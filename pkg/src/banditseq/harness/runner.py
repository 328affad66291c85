"""Experiment driver: pretrain (or reuse cached checkpoints), snapshot
reference metrics, run the bandit phase against the configured rater, and
aggregate deltas across seeds.

Seeds are independent: each gets its own derived random streams, its own
checkpoints, and its own failure handling, so they can run in any order
or in parallel processes without changing the aggregated output. Within
one seed the phases are strictly sequential.

The bandit trainer only ever sees bandit-split sources and a rating
callback; references stay inside the rater and the (separate) supervised
baseline arm.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .. import diffcore as dc
from ..bandit import (a2c_batch_step, pretrain_critic, pretrain_supervised,
                      supervised_finetune_step)
from ..rater import rate
from ..reward import sentence_bleu
from ..seq2seq import HEAD_SCALAR, Seq2SeqConfig, Seq2SeqModel
from .config import ExperimentConfig
from .metrics import (confidence_interval, delta_metric, heldout_bleu_metric,
                      per_sentence_bleu_metric)
from .report import render_reward_svg, write_records_csv, write_summary_csv

PHASES = ("pretrain", "critic", "eval", "bandit", "sup", "error")


@dataclass(frozen=True)
class RunRecord:
    """One logged step. Steps are strictly increasing within a phase."""

    seed: int
    phase: str
    step: int
    online_reward: float | None = None   # running mean of rated samples
    heldout_bleu: float | None = None
    critic_loss: float | None = None
    wall_clock: float = 0.0              # seconds since the seed started

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.online_reward is not None and not 0.0 <= self.online_reward <= 1.0:
            raise ValueError(f"online reward {self.online_reward} outside [0, 1]")


@dataclass
class SeedResult:
    seed: int
    metrics: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    error: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    experiment_id: str
    seed_results: list
    summary_rows: list

    def failures(self) -> list:
        return [sr for sr in self.seed_results if sr.error]


def experiment_identity(config: ExperimentConfig) -> str:
    """Hash of everything that can change the numbers (not paths/labels)."""
    d = config.to_dict()
    for k in ("preset", "out_dir", "cache_dir", "workers"):
        d.pop(k, None)
    d["seeds"] = sorted(d["seeds"])  # seed order never changes results
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@functools.lru_cache(maxsize=8)
def _corpus_for(task_json: str):
    from .config import ExperimentConfig as _EC  # noqa: F401 (import cycle guard)
    from .config import TaskSpec
    d = json.loads(task_json)
    kind = d.pop("kind")
    if kind == "cipher":
        d["length_range"] = tuple(d["length_range"])
        d["fractions"] = tuple(d["fractions"])
        return TaskSpec(kind="cipher", **d).build()
    d["fractions"] = tuple(d["fractions"])
    return TaskSpec(kind="text", **d).build()


def _cache_key(parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _atomic_save(store: dc.ParamStore, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
    store.save(tmp)
    os.replace(tmp, path)


def _load_or_pretrain_actor(config, seed, corpus, actor, cache_dir, records, t0):
    key = _cache_key({"task": config.task.to_dict(),
                      "model": config.model.to_dict(),
                      "recipe": {"epochs": config.pretrain.epochs,
                                 "batch_size": config.pretrain.batch_size,
                                 "alpha": config.pretrain.alpha,
                                 "clip_norm": config.pretrain.clip_norm},
                      "seed": seed})
    path = cache_dir / f"actor-{key}.ckpt"
    if path.exists():
        return dc.ParamStore.load(path), key
    store, stats = pretrain_supervised(
        actor, corpus.split("supervised"), corpus.split("dev"),
        config.pretrain, dc.seeded_rng(seed).fork("pretrain"))
    for st in stats:
        records.append(RunRecord(seed, "pretrain", st.epoch,
                                 wall_clock=time.monotonic() - t0))
    _atomic_save(store, path)
    return store, key


def _load_or_pretrain_critic(config, seed, corpus, actor, astore, actor_key,
                             critic, cache_dir, records, t0):
    key = _cache_key({"actor": actor_key,
                      "recipe": {"epochs": config.critic_pretrain.epochs,
                                 "batch_size": config.critic_pretrain.batch_size,
                                 "alpha": config.critic_pretrain.alpha,
                                 "clip_norm": config.critic_pretrain.clip_norm},
                      "seed": seed})
    path = cache_dir / f"critic-{key}.ckpt"
    if path.exists():
        return dc.ParamStore.load(path)
    cstore, losses = pretrain_critic(
        critic, actor, astore, corpus.split("supervised"),
        config.critic_pretrain, dc.seeded_rng(seed).fork("criticpre"))
    for i, loss in enumerate(losses, start=1):
        records.append(RunRecord(seed, "critic", i, critic_loss=loss,
                                 wall_clock=time.monotonic() - t0))
    _atomic_save(cstore, path)
    return cstore


def run_seed(config: ExperimentConfig, seed: int, cache_dir=None) -> SeedResult:
    """One seed's full pipeline; never raises, failures land in .error."""
    t0 = time.monotonic()
    records: list = []
    try:
        return _run_seed_inner(config, seed, cache_dir, records, t0)
    except Exception as e:  # isolate the seed, keep siblings running
        records.append(RunRecord(seed, "error", 0,
                                 wall_clock=time.monotonic() - t0))
        detail = traceback.format_exception_only(type(e), e)[-1].strip()
        return SeedResult(seed, records=records, error=detail)


def _run_seed_inner(config, seed, cache_dir, records, t0):
    corpus = _corpus_for(json.dumps(config.task.to_dict(), sort_keys=True))
    cache = Path(cache_dir or config.cache_dir
                 or Path(config.out_dir) / "checkpoints")
    cache.mkdir(parents=True, exist_ok=True)

    mk = config.model
    actor = Seq2SeqModel(Seq2SeqConfig(
        len(corpus.src_vocab), len(corpus.tgt_vocab), embed_dim=mk.embed_dim,
        hidden_dim=mk.hidden_dim, max_decode_len=mk.max_decode_len))
    critic = Seq2SeqModel(Seq2SeqConfig(
        len(corpus.src_vocab), len(corpus.tgt_vocab), embed_dim=mk.embed_dim,
        hidden_dim=mk.hidden_dim, max_decode_len=mk.max_decode_len,
        head=HEAD_SCALAR))

    astore, actor_key = _load_or_pretrain_actor(
        config, seed, corpus, actor, cache, records, t0)
    cstore = _load_or_pretrain_critic(
        config, seed, corpus, actor, astore, actor_key, critic, cache,
        records, t0)

    ban = corpus.split("bandit")
    test = corpus.split("test")
    bsz = config.bandit.batch_size

    # The reference pass consumes the exact substreams the first bandit
    # pass is about to use, so its per-sentence scores pair sample-for-
    # sample with the early rounds and the seed's delta is measured with
    # common random numbers.
    rng = dc.seeded_rng(seed).fork("bandit")
    ps_before = per_sentence_bleu_metric(actor, astore, ban, rng, batch_size=bsz)
    held_before = heldout_bleu_metric(actor, astore, test)
    records.append(RunRecord(seed, "eval", 0, online_reward=ps_before,
                             heldout_bleu=held_before,
                             wall_clock=time.monotonic() - t0))

    astore_b = astore.clone()
    cstore_b = cstore.clone()
    aopt = dc.Adam(astore_b, alpha=config.bandit.alpha)
    copt = dc.Adam(cstore_b, alpha=config.bandit.alpha)

    perturbed = bool(config.rater.perturbations)
    calls = 0

    def rate_fn(hyp, ref):
        nonlocal calls
        calls += 1
        if perturbed:
            return rate(hyp, ref, config.rater, calls)
        return sentence_bleu(hyp, ref).score

    rated_sum = 0.0
    rated_n = 0
    step = 0
    clean_by_epoch = []
    for ep in range(config.bandit.epochs):
        order = rng.fork("order", ep).permutation(len(ban))
        clean_total = 0.0
        for start in range(0, len(order), bsz):
            batch = [ban[int(i)] for i in order[start:start + bsz]]
            outcomes = a2c_batch_step(
                actor, astore_b, critic, cstore_b, batch, rate_fn, aopt, copt,
                rng.fork("round", ep, start), clip_norm=config.bandit.clip_norm)
            for out, pair in zip(outcomes, batch):
                rated_sum += out.reward
                rated_n += 1
                clean_total += sentence_bleu(out.sample.tokens,
                                             pair.target).score
            step += 1
            records.append(RunRecord(
                seed, "bandit", step,
                online_reward=min(1.0, max(0.0, rated_sum / rated_n)),
                critic_loss=sum(o.critic_loss for o in outcomes) / len(outcomes),
                wall_clock=time.monotonic() - t0))
        clean_by_epoch.append(clean_total / len(ban))

    # Per-sentence after-value accumulates online over the final pass;
    # a zero-epoch run leaves the model untouched, so delta is exactly 0.
    ps_after = clean_by_epoch[-1] if clean_by_epoch else ps_before
    held_after = (heldout_bleu_metric(actor, astore_b, test)
                  if config.bandit.epochs else held_before)
    records.append(RunRecord(seed, "eval", 1, online_reward=ps_after,
                             heldout_bleu=held_after,
                             wall_clock=time.monotonic() - t0))

    metrics = {
        "per_sentence_before": ps_before,
        "per_sentence_after": ps_after,
        "delta_per_sentence": delta_metric(ps_after, ps_before),
        "heldout_before": held_before,
        "heldout_after": held_after,
        "delta_heldout": delta_metric(held_after, held_before),
    }

    if config.baseline == "supervised":
        metrics.update(_supervised_arm(config, seed, actor, astore, ban, test,
                                       ps_before, held_before, records, t0))

    return SeedResult(seed, metrics=metrics, records=records)


def _supervised_arm(config, seed, actor, astore, ban, test, ps_before,
                    held_before, records, t0):
    """Same visit schedule as the bandit arm, but plain likelihood steps
    on the references. The comparison arm for rated-feedback learning."""
    store = astore.clone()
    opt = dc.Adam(store, alpha=config.bandit.alpha)
    rng = dc.seeded_rng(seed).fork("bandit")
    bsz = config.bandit.batch_size
    for ep in range(config.bandit.epochs):
        order = rng.fork("order", ep).permutation(len(ban))
        for start in range(0, len(order), bsz):
            batch = [ban[int(i)] for i in order[start:start + bsz]]
            supervised_finetune_step(actor, store, batch, opt)
        records.append(RunRecord(seed, "sup", ep + 1,
                                 wall_clock=time.monotonic() - t0))
    measure_rng = dc.seeded_rng(seed).fork("bandit")
    ps_after = per_sentence_bleu_metric(actor, store, ban, measure_rng,
                                        batch_size=bsz)
    held_after = heldout_bleu_metric(actor, store, test)
    return {
        "sup_per_sentence_after": ps_after,
        "sup_delta_per_sentence": delta_metric(ps_after, ps_before),
        "sup_heldout_after": held_after,
        "sup_delta_heldout": delta_metric(held_after, held_before),
    }


def _seed_job(config_json: str, seed: int, cache_dir) -> SeedResult:
    config = ExperimentConfig.from_dict(json.loads(config_json))
    return run_seed(config, seed, cache_dir)


# (metric key, summary metric name, summary phase)
_SUMMARY_LAYOUT = (
    ("per_sentence_before", "per_sentence_bleu", "reference"),
    ("per_sentence_after", "per_sentence_bleu", "bandit"),
    ("delta_per_sentence", "delta_per_sentence_bleu", "bandit"),
    ("heldout_before", "heldout_bleu", "reference"),
    ("heldout_after", "heldout_bleu", "bandit"),
    ("delta_heldout", "delta_heldout_bleu", "bandit"),
    ("sup_per_sentence_after", "per_sentence_bleu", "supervised"),
    ("sup_delta_per_sentence", "delta_per_sentence_bleu", "supervised"),
    ("sup_heldout_after", "heldout_bleu", "supervised"),
    ("sup_delta_heldout", "delta_heldout_bleu", "supervised"),
)


def summarize(config: ExperimentConfig, seed_results) -> list:
    """Per-seed and across-seed rows, in a canonical order that does not
    depend on seed execution order."""
    exp_id = experiment_identity(config)
    ok = sorted((sr for sr in seed_results if not sr.error),
                key=lambda sr: sr.seed)
    rows = []
    for key, metric, phase in _SUMMARY_LAYOUT:
        have = [sr for sr in ok if key in sr.metrics]
        if not have:
            continue
        for sr in have:
            rows.append({"experiment_id": exp_id, "preset": config.preset,
                         "seed": str(sr.seed), "metric": metric,
                         "phase": phase, "value": sr.metrics[key],
                         "ci_low": None, "ci_high": None})
        if len(have) >= 2:
            mean, half = confidence_interval([sr.metrics[key] for sr in have])
            rows.append({"experiment_id": exp_id, "preset": config.preset,
                         "seed": "all", "metric": metric, "phase": phase,
                         "value": mean, "ci_low": mean - half,
                         "ci_high": mean + half})
    return rows


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every seed, aggregate, and write the artifact files.

    Writes records.csv (full log, wall-clock included), summary.csv (the
    deterministic aggregate: identical config implies identical bytes),
    config.json (the resolved configuration), and reward_vs_step.svg when
    any bandit rounds ran.
    """
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(config.cache_dir) if config.cache_dir else out / "checkpoints"

    if config.workers > 1 and len(config.seeds) > 1:
        blob = json.dumps(config.to_dict(), sort_keys=True)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_seed_job, blob, s, str(cache_dir))
                       for s in config.seeds]
            results = [f.result() for f in futures]
    else:
        results = [run_seed(config, s, cache_dir) for s in config.seeds]
    results.sort(key=lambda sr: sr.seed)

    rows = summarize(config, results)
    all_records = [r for sr in results for r in sr.records]
    write_records_csv(all_records, out / "records.csv")
    write_summary_csv(rows, out / "summary.csv")
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    if any(r.phase == "bandit" for r in all_records):
        render_reward_svg(all_records, out / "reward_vs_step.svg")
    return ExperimentResult(config, experiment_identity(config), results, rows)
