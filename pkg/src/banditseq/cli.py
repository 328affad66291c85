"""Command-line entry point.

    banditseq gen-data      --config C --out-dir D
    banditseq pretrain      --config C [--seed N] [--out-dir D]
    banditseq bandit-train  --config C [--seed N] [--out-dir D] [--workers W]
    banditseq evaluate      --config C --checkpoint F --split S [--seed N]
    banditseq rate          --hyp F --ref F [--config C]
    banditseq report        [--records F] [--sweep-dir D] --out-dir D

`--config` takes either a preset name (see `build_presets`) or a path to
a config JSON file. Exit codes: 0 success, 1 configuration error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from pathlib import Path

from . import diffcore as dc
from .data import save_corpus
from .errors import ConfigError
from .harness import (build_presets, get_preset, load_config,
                      render_reward_svg, render_sweep_svg, run_experiment)
from .harness.runner import (RunRecord, _load_or_pretrain_actor,
                             _load_or_pretrain_critic)
from .rater import rate as rate_score
from .reward import corpus_bleu, sentence_bleu


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors, not crashes
        raise ConfigError(message)


def _resolve_config(value: str):
    if Path(value).exists():
        return load_config(value)
    if value in build_presets():
        return get_preset(value)
    raise ConfigError(f"--config {value!r} is neither a file nor a preset name")


def _apply_overrides(config, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out_dir", None):
        changes["out_dir"] = args.out_dir
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    return dataclasses.replace(config, **changes) if changes else config


def _cmd_gen_data(args) -> int:
    config = _apply_overrides(_resolve_config(args.config), args)
    corpus = config.task.build()
    out = Path(config.out_dir) / "corpus"
    save_corpus(corpus, out)
    counts = corpus.split_counts()
    print(f"wrote {out} ({len(corpus.pairs)} pairs: "
          + ", ".join(f"{k}={v}" for k, v in counts.items()) + ")")
    return 0


def _cmd_pretrain(args) -> int:
    import time

    from .seq2seq import HEAD_SCALAR, Seq2SeqConfig, Seq2SeqModel
    config = _apply_overrides(_resolve_config(args.config), args)
    corpus = config.task.build()
    cache = Path(config.cache_dir or Path(config.out_dir) / "checkpoints")
    cache.mkdir(parents=True, exist_ok=True)
    mk = config.model
    actor = Seq2SeqModel(Seq2SeqConfig(
        len(corpus.src_vocab), len(corpus.tgt_vocab), embed_dim=mk.embed_dim,
        hidden_dim=mk.hidden_dim, max_decode_len=mk.max_decode_len))
    critic = Seq2SeqModel(Seq2SeqConfig(
        len(corpus.src_vocab), len(corpus.tgt_vocab), embed_dim=mk.embed_dim,
        hidden_dim=mk.hidden_dim, max_decode_len=mk.max_decode_len,
        head=HEAD_SCALAR))
    for seed in config.seeds:
        records: list = []
        t0 = time.monotonic()
        astore, akey = _load_or_pretrain_actor(config, seed, corpus, actor,
                                               cache, records, t0)
        _load_or_pretrain_critic(config, seed, corpus, actor, astore, akey,
                                 critic, cache, records, t0)
        print(f"seed {seed}: checkpoints under {cache} "
              f"({'fresh' if records else 'cached'})")
    return 0


def _cmd_bandit_train(args) -> int:
    config = _apply_overrides(_resolve_config(args.config), args)
    result = run_experiment(config)
    out = Path(config.out_dir)
    for row in result.summary_rows:
        if row["seed"] == "all" and row["metric"].startswith("delta"):
            ci = (f" [{row['ci_low']:+.4f}, {row['ci_high']:+.4f}]"
                  if row["ci_low"] is not None else "")
            print(f"{row['metric']}/{row['phase']}: {row['value']:+.4f}{ci}")
    for sr in result.failures():
        print(f"seed {sr.seed} failed: {sr.error}", file=sys.stderr)
    print(f"wrote {out / 'summary.csv'}")
    return 2 if result.failures() else 0


def _cmd_evaluate(args) -> int:
    from .harness.metrics import heldout_bleu_metric, per_sentence_bleu_metric
    from .seq2seq import Seq2SeqConfig, Seq2SeqModel
    config = _apply_overrides(_resolve_config(args.config), args)
    corpus = config.task.build()
    pairs = corpus.split(args.split)
    if not pairs:
        raise ConfigError(f"split {args.split!r} is empty")
    mk = config.model
    model = Seq2SeqModel(Seq2SeqConfig(
        len(corpus.src_vocab), len(corpus.tgt_vocab), embed_dim=mk.embed_dim,
        hidden_dim=mk.hidden_dim, max_decode_len=mk.max_decode_len))
    store = dc.ParamStore.load(args.checkpoint)
    seed = args.seed if args.seed is not None else config.seeds[0]
    rng = dc.seeded_rng(seed).fork("evaluate")
    ps = per_sentence_bleu_metric(model, store, pairs, rng,
                                  batch_size=config.bandit.batch_size)
    held = heldout_bleu_metric(model, store, pairs)
    print(f"per_sentence_bleu={ps:.6f} heldout_bleu={held:.6f} "
          f"split={args.split} n={len(pairs)} seed={seed}")
    return 0


def _cmd_rate(args) -> int:
    hyp_path, ref_path = Path(args.hyp), Path(args.ref)
    for p in (hyp_path, ref_path):
        if not p.exists():
            raise ConfigError(f"file not found: {p}")
    hyps = hyp_path.read_text(encoding="utf-8").splitlines()
    refs = ref_path.read_text(encoding="utf-8").splitlines()
    if len(hyps) != len(refs):
        raise ConfigError(f"{hyp_path} has {len(hyps)} lines, "
                          f"{ref_path} has {len(refs)}")
    rater = (_resolve_config(args.config).rater if args.config else None)
    hyp_toks = [h.split() for h in hyps]
    ref_toks = [r.split() for r in refs]
    for i, (h, r) in enumerate(zip(hyp_toks, ref_toks)):
        clean = sentence_bleu(h, r).score
        rated = rate_score(h, r, rater, i) if rater else clean
        print(f"{i}\t{clean:.6f}\t{rated:.6f}")
    print(f"corpus_bleu\t{corpus_bleu(hyp_toks, ref_toks):.6f}")
    return 0


_SWEEP_PATTERNS = (("fig4-gran-g", "granularity g"),
                   ("fig4-var-lam", "variance scale"),
                   ("fig4-skew-rho", "skew exponent"))


def _cmd_report(args) -> int:
    import csv as _csv
    out = Path(args.out_dir)
    wrote_any = False
    if args.records:
        rows = []
        with open(args.records, newline="", encoding="utf-8") as fh:
            for d in _csv.DictReader(fh):
                rows.append(RunRecord(
                    seed=int(d["seed"]), phase=d["phase"], step=int(d["step"]),
                    online_reward=float(d["online_reward"]) if d["online_reward"] else None,
                    heldout_bleu=float(d["heldout_bleu"]) if d["heldout_bleu"] else None,
                    critic_loss=float(d["critic_loss"]) if d["critic_loss"] else None,
                    wall_clock=float(d["wall_clock"]) if d["wall_clock"] else 0.0))
        render_reward_svg(rows, out / "reward_vs_step.svg")
        print(f"wrote {out / 'reward_vs_step.svg'}")
        wrote_any = True
    if args.sweep_dir:
        families: dict = {}
        for summary in sorted(Path(args.sweep_dir).glob("*/summary.csv")):
            with open(summary, newline="", encoding="utf-8") as fh:
                for d in _csv.DictReader(fh):
                    if (d["seed"] != "all"
                            or d["metric"] != "delta_per_sentence_bleu"
                            or d["phase"] != "bandit" or not d["ci_low"]):
                        continue
                    for prefix, label in _SWEEP_PATTERNS:
                        m = re.match(re.escape(prefix) + r"([0-9.]+)$",
                                     d["preset"])
                        if m:
                            families.setdefault((prefix, label), []).append(
                                (float(m.group(1)), float(d["value"]),
                                 float(d["ci_low"]), float(d["ci_high"])))
        for (prefix, label), entries in sorted(families.items()):
            name = prefix.rstrip("-").replace("fig4-", "sweep-") + ".svg"
            render_sweep_svg(entries, out / name, label)
            print(f"wrote {out / name}")
            wrote_any = True
    if not wrote_any:
        raise ConfigError("report: nothing to do "
                          "(pass --records and/or --sweep-dir)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="banditseq",
                     description="Bandit training for a small attention "
                                 "translator with simulated raters.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="preset name or config JSON path")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out-dir", help="override the config's out_dir")

    p = sub.add_parser("gen-data", help="materialize the configured corpus")
    common(p)
    p = sub.add_parser("pretrain", help="build pretraining checkpoints")
    common(p)
    p = sub.add_parser("bandit-train", help="run the configured experiment")
    common(p)
    p.add_argument("--workers", type=int, help="parallel seed processes")
    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=("supervised", "bandit", "dev", "test"))
    p = sub.add_parser("rate", help="score hypothesis lines against references")
    p.add_argument("--hyp", required=True, help="hypothesis file, one per line")
    p.add_argument("--ref", required=True, help="reference file, line-aligned")
    p.add_argument("--config", help="optional preset/config for the rater")
    p = sub.add_parser("report", help="render charts from run artifacts")
    p.add_argument("--records", help="records.csv to chart")
    p.add_argument("--sweep-dir", help="directory of per-preset run dirs")
    p.add_argument("--out-dir", required=True)
    return parser


_COMMANDS = {"gen-data": _cmd_gen_data, "pretrain": _cmd_pretrain,
             "bandit-train": _cmd_bandit_train, "evaluate": _cmd_evaluate,
             "rate": _cmd_rate, "report": _cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
