"""Experiment configs, run-level metrics, report artifacts, the run
loop, and the command-line surface."""

import csv
import dataclasses
import random
import xml.etree.ElementTree as ET
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.stats

import banditseq.diffcore as dc
import banditseq.harness.runner as runner_mod
from banditseq.bandit import TrainConfig
from banditseq.cli import main as cli_main
from banditseq.data import SentencePair
from banditseq.errors import ConfigError, ContractViolation
from banditseq.harness import (ExperimentConfig, RunRecord, TaskSpec,
                               build_presets, confidence_interval,
                               delta_metric, emit_report,
                               experiment_identity, get_preset,
                               heldout_bleu_metric, load_config,
                               per_sentence_bleu_metric, render_reward_svg,
                               render_sweep_svg, run_experiment, save_config,
                               write_records_csv, write_summary_csv)
from banditseq.harness.report import RECORD_FIELDS, SUMMARY_FIELDS
from banditseq.reward import sentence_bleu
from banditseq.seq2seq import EOS


class TestExperimentConfig:
    def test_dict_roundtrip(self):
        c = get_preset("table2-desk")
        assert ExperimentConfig.from_dict(c.to_dict()).to_dict() == c.to_dict()

    def test_file_roundtrip(self, tmp_path):
        c = get_preset("fig4-gran-g5")
        save_config(c, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json").to_dict() == c.to_dict()

    def test_unknown_key_rejected(self):
        d = get_preset("smoke").to_dict()
        d["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            ExperimentConfig.from_dict(d)

    def test_missing_key_reported(self):
        d = get_preset("smoke").to_dict()
        del d["model"]
        with pytest.raises(ConfigError, match="model"):
            ExperimentConfig.from_dict(d)

    def test_seed_validation(self):
        c = get_preset("smoke")
        with pytest.raises(ConfigError):
            dataclasses.replace(c, seeds=())
        with pytest.raises(ConfigError):
            dataclasses.replace(c, seeds=(1, 1))

    def test_unknown_task_kind(self):
        with pytest.raises(ConfigError):
            TaskSpec(kind="images")

    def test_text_task_needs_both_paths(self):
        with pytest.raises(ConfigError):
            TaskSpec(kind="text", src_path="only.src")

    def test_unknown_preset_lists_names(self):
        with pytest.raises(ConfigError, match="smoke"):
            get_preset("nope")

    def test_sweep_presets_cover_the_grids(self):
        names = set(build_presets())
        assert {f"fig4-gran-g{g}" for g in range(1, 11)} <= names
        assert {"fig4-var-lam0.1", "fig4-var-lam1", "fig4-var-lam5"} <= names
        assert {"fig4-skew-rho0.25", "fig4-skew-rho1", "fig4-skew-rho4"} <= names

    def test_load_config_missing_and_invalid(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")
        (tmp_path / "bad.json").write_text("{broken")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")

    def test_identity_ignores_labels_and_seed_order(self):
        c = get_preset("smoke")
        base = experiment_identity(c)
        relabeled = dataclasses.replace(c, preset="renamed", out_dir="x",
                                        workers=3)
        assert experiment_identity(relabeled) == base
        assert experiment_identity(dataclasses.replace(c, seeds=(1, 0))) == base
        assert experiment_identity(dataclasses.replace(c, seeds=(0, 2))) != base
        retuned = dataclasses.replace(c, bandit=TrainConfig(2, 4, 5e-4))
        assert experiment_identity(retuned) != base


class TestConfidenceInterval:
    def test_two_point_blowup(self):
        mean, half = confidence_interval([0.0, 1.0])
        assert mean == 0.5
        assert half == pytest.approx(6.353, rel=1e-3)

    def test_matches_t_formula(self):
        vals = np.random.default_rng(4).normal(0.3, 0.05, size=7)
        mean, half = confidence_interval(vals)
        sd = vals.std(ddof=1)
        want = scipy.stats.t.ppf(0.975, 6) * sd / np.sqrt(7)
        assert mean == pytest.approx(vals.mean(), abs=1e-12)
        assert half == pytest.approx(want, abs=1e-12)

    def test_constant_values_zero_width(self):
        # sd of identical floats can carry rounding dust from the mean
        assert confidence_interval([0.4, 0.4, 0.4])[1] == pytest.approx(0.0, abs=1e-12)

    def test_needs_two_values(self):
        with pytest.raises(ContractViolation):
            confidence_interval([0.5])


class _EchoModel:
    """Copies the source and appends the terminator."""

    def sample(self, store, source, rng):
        return SimpleNamespace(tokens=list(source) + [EOS])

    def greedy_decode(self, store, source):
        return list(source) + [EOS]


class _StreamModel:
    """Emits tokens straight off the sample stream, so any change to the
    stream layout changes the output."""

    def sample(self, store, source, rng):
        toks = [int(t) for t in rng.integers(3, 9, size=len(source))]
        return SimpleNamespace(tokens=toks + [EOS])


def _pairs(n, seed=0):
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        src = tuple(int(t) for t in gen.integers(3, 9, size=6))
        out.append(SentencePair(src, src + (EOS,), split="bandit"))
    return out


class TestMetrics:
    def test_perfect_model_scores_one(self):
        score = per_sentence_bleu_metric(_EchoModel(), None, _pairs(9),
                                         dc.seeded_rng(0).fork("m"))
        assert score == 1.0

    def test_pass_consumes_the_training_stream_layout(self):
        # the documented pairing contract: order fork, per-batch round
        # fork, per-slot sample fork
        pairs = _pairs(11, seed=3)
        model = _StreamModel()
        rng = dc.seeded_rng(5).fork("bandit")
        got = per_sentence_bleu_metric(model, None, pairs, rng, batch_size=4)

        replay = dc.seeded_rng(5).fork("bandit")
        order = replay.fork("order", 0).permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), 4):
            round_rng = replay.fork("round", 0, start)
            for j, idx in enumerate(order[start:start + 4]):
                pair = pairs[int(idx)]
                sample = model.sample(None, pair.source,
                                      round_rng.fork("sample", j))
                total += sentence_bleu(sample.tokens, pair.target).score
        assert got == pytest.approx(total / len(pairs), abs=1e-15)

    def test_heldout_deterministic_and_order_invariant(self):
        pairs = _pairs(8, seed=1)
        a = heldout_bleu_metric(_EchoModel(), None, pairs)
        b = heldout_bleu_metric(_EchoModel(), None, list(reversed(pairs)))
        assert a == b == 1.0

    def test_delta_is_antisymmetric(self):
        assert delta_metric(0.7, 0.2) == -delta_metric(0.2, 0.7)

    def test_empty_split_rejected(self):
        with pytest.raises(ContractViolation):
            per_sentence_bleu_metric(_EchoModel(), None, [],
                                     dc.seeded_rng(0).fork("m"))
        with pytest.raises(ContractViolation):
            heldout_bleu_metric(_EchoModel(), None, [])

    def test_bad_batch_size_rejected(self):
        with pytest.raises(ContractViolation):
            per_sentence_bleu_metric(_EchoModel(), None, _pairs(3),
                                     dc.seeded_rng(0).fork("m"), batch_size=0)


class TestRunRecord:
    def test_phase_and_reward_validation(self):
        with pytest.raises(ValueError):
            RunRecord(0, "warmup", 1)
        with pytest.raises(ValueError):
            RunRecord(0, "bandit", 1, online_reward=1.2)


def _fake_records():
    recs = []
    for seed in (0, 1):
        for step in range(1, 6):
            recs.append(RunRecord(seed, "bandit", step,
                                  online_reward=0.1 * step + 0.02 * seed,
                                  critic_loss=1.0 / step,
                                  wall_clock=0.5 * step))
    return recs


def _fake_summary_rows():
    rows = []
    for seed in ("0", "1", "all"):
        rows.append({"experiment_id": "abc123", "preset": "smoke",
                     "seed": seed, "metric": "delta_per_sentence_bleu",
                     "phase": "bandit", "value": 0.01,
                     "ci_low": 0.002 if seed == "all" else None,
                     "ci_high": 0.018 if seed == "all" else None})
    return rows


class TestReports:
    def test_empty_records_header_only(self, tmp_path):
        write_records_csv([], tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines == [",".join(RECORD_FIELDS)]

    def test_one_row_per_record(self, tmp_path):
        recs = _fake_records()
        write_records_csv(recs, tmp_path / "r.csv")
        with open(tmp_path / "r.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(recs)
        assert rows[0]["online_reward"] == "0.1"
        assert rows[5]["online_reward"] == "0.12"
        assert rows[0]["heldout_bleu"] == ""  # None stays blank

    def test_summary_bytes_ignore_row_order(self, tmp_path):
        rows = _fake_summary_rows()
        write_summary_csv(rows, tmp_path / "a.csv")
        shuffled = rows[:]
        random.Random(7).shuffle(shuffled)
        write_summary_csv(shuffled, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        with open(tmp_path / "a.csv", newline="") as fh:
            assert tuple(csv.DictReader(fh).fieldnames) == SUMMARY_FIELDS

    def test_reward_chart_one_line_per_seed(self, tmp_path):
        render_reward_svg(_fake_records(), tmp_path / "c.svg")
        text = (tmp_path / "c.svg").read_text()
        ET.fromstring(text)  # well-formed
        assert text.count("<polyline") == 2

    def test_sweep_chart_marks_every_point(self, tmp_path):
        entries = [(1, 0.004, 0.001, 0.007), (5, 0.01, 0.006, 0.014),
                   (10, 0.009, 0.002, 0.016)]
        render_sweep_svg(entries, tmp_path / "s.svg", "granularity g")
        text = (tmp_path / "s.svg").read_text()
        ET.fromstring(text)
        assert text.count("<circle") == 3
        assert "granularity g" in text

    def test_emit_report_dispatch(self, tmp_path):
        paths = emit_report(_fake_records(), "csv", tmp_path,
                            summary_rows=_fake_summary_rows())
        assert {p.name for p in paths} == {"records.csv", "summary.csv"}
        paths = emit_report(_fake_records(), "svg", tmp_path)
        assert [p.name for p in paths] == ["reward_vs_step.svg"]
        with pytest.raises(ValueError):
            emit_report(_fake_records(), "png", tmp_path)


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRunExperiment:
    def test_artifacts_and_schedule(self, tmp_path):
        config = dataclasses.replace(get_preset("smoke"),
                                     cache_dir=str(tmp_path / "cache"))
        result = run_experiment(config, tmp_path / "run")
        for name in ("records.csv", "summary.csv", "config.json",
                     "reward_vs_step.svg"):
            assert (tmp_path / "run" / name).exists()
        assert not result.failures()
        # steps strictly increase within each seed and phase
        seen = {}
        for row in _read_rows(tmp_path / "run" / "records.csv"):
            key = (row["seed"], row["phase"])
            step = int(row["step"])
            assert step > seen.get(key, -1)
            seen[key] = step
        assert {row["seed"] for row in _read_rows(
            tmp_path / "run" / "summary.csv")} == {"0", "1", "all"}

    def test_rerun_reproduces_numbers(self, tmp_path):
        config = dataclasses.replace(get_preset("smoke"),
                                     cache_dir=str(tmp_path / "cache"))
        run_experiment(config, tmp_path / "warmup")  # cold run trains and logs it
        a = run_experiment(config, tmp_path / "a")
        b = run_experiment(config, tmp_path / "b")
        assert (tmp_path / "a" / "summary.csv").read_bytes() == \
            (tmp_path / "b" / "summary.csv").read_bytes()
        # records match except wall-clock, which measures the host
        strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_clock"}
                              for r in rows]
        assert strip(_read_rows(tmp_path / "a" / "records.csv")) == \
            strip(_read_rows(tmp_path / "b" / "records.csv"))
        assert a.experiment_id == b.experiment_id

    def test_zero_epochs_is_a_measured_noop(self, tmp_path):
        config = dataclasses.replace(get_preset("smoke"),
                                     bandit=TrainConfig(0, 4, 1e-3),
                                     cache_dir=str(tmp_path / "cache"))
        result = run_experiment(config, tmp_path / "run")
        for sr in result.seed_results:
            assert sr.metrics["delta_per_sentence"] == 0.0
            assert sr.metrics["delta_heldout"] == 0.0
            assert sr.metrics["per_sentence_after"] == sr.metrics["per_sentence_before"]

    def test_worker_pool_matches_sequential(self, tmp_path):
        config = dataclasses.replace(get_preset("smoke"),
                                     cache_dir=str(tmp_path / "cache"))
        run_experiment(config, tmp_path / "seq")
        run_experiment(dataclasses.replace(config, workers=2), tmp_path / "par")
        assert (tmp_path / "seq" / "summary.csv").read_bytes() == \
            (tmp_path / "par" / "summary.csv").read_bytes()

    def test_one_seed_failure_is_isolated(self, tmp_path, monkeypatch):
        calls = {"n": 0}
        real = runner_mod.pretrain_supervised

        def flaky(*a, **k):
            calls["n"] += 1
            if calls["n"] == 2:
                raise RuntimeError("disk full")
            return real(*a, **k)

        monkeypatch.setattr(runner_mod, "pretrain_supervised", flaky)
        config = dataclasses.replace(get_preset("smoke"),
                                     cache_dir=str(tmp_path / "cache"))
        result = run_experiment(config, tmp_path / "run")
        assert len(result.failures()) == 1
        bad = result.failures()[0]
        assert "disk full" in bad.error
        assert "error" in {r.phase for r in bad.records}
        good = [sr for sr in result.seed_results if not sr.error]
        assert len(good) == 1 and "delta_per_sentence" in good[0].metrics
        # across-seed rows need two survivors, so none here
        assert all(row["seed"] != "all" for row in result.summary_rows)

    def test_supervised_baseline_arm_reported(self, tmp_path):
        config = dataclasses.replace(get_preset("smoke"),
                                     baseline="supervised",
                                     cache_dir=str(tmp_path / "cache"))
        result = run_experiment(config, tmp_path / "run")
        for sr in result.seed_results:
            assert "sup_delta_per_sentence" in sr.metrics
        phases = {(row["metric"], row["phase"]) for row in result.summary_rows}
        assert ("delta_per_sentence_bleu", "supervised") in phases
        assert ("delta_per_sentence_bleu", "bandit") in phases


class TestCLI:
    def test_bandit_train_and_reports(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = cli_main(["bandit-train", "--config", "smoke",
                       "--out-dir", str(out)])
        captured = capsys.readouterr()
        assert rc == 0
        assert "delta_per_sentence_bleu/bandit:" in captured.out
        assert (out / "summary.csv").exists()

        rc = cli_main(["report", "--records", str(out / "records.csv"),
                       "--out-dir", str(tmp_path / "charts")])
        assert rc == 0
        assert (tmp_path / "charts" / "reward_vs_step.svg").exists()

    def test_gen_data_and_pretrain_and_evaluate(self, tmp_path, capsys):
        out = tmp_path / "ws"
        assert cli_main(["gen-data", "--config", "smoke",
                         "--out-dir", str(out)]) == 0
        assert "supervised=" in capsys.readouterr().out
        assert (out / "corpus" / "corpus.json").exists()

        assert cli_main(["pretrain", "--config", "smoke",
                         "--out-dir", str(out)]) == 0
        assert "checkpoints under" in capsys.readouterr().out
        ckpts = sorted((out / "checkpoints").glob("actor-*.ckpt"))
        assert ckpts

        rc = cli_main(["evaluate", "--config", "smoke",
                       "--checkpoint", str(ckpts[0]), "--split", "bandit",
                       "--out-dir", str(out)])
        assert rc == 0
        assert "per_sentence_bleu=" in capsys.readouterr().out

    def test_rate_lines_and_corpus_row(self, tmp_path, capsys):
        (tmp_path / "h.txt").write_text("a b c d\nx y z w\n")
        (tmp_path / "r.txt").write_text("a b c d\na b c d\n")
        rc = cli_main(["rate", "--hyp", str(tmp_path / "h.txt"),
                       "--ref", str(tmp_path / "r.txt")])
        lines = capsys.readouterr().out.splitlines()
        assert rc == 0
        assert len(lines) == 3
        first = lines[0].split("\t")
        assert first[0] == "0" and float(first[1]) == 1.0
        assert lines[-1].startswith("corpus_bleu\t")

    def test_rate_with_configured_rater(self, tmp_path, capsys):
        (tmp_path / "h.txt").write_text("a b x d\n")
        (tmp_path / "r.txt").write_text("a b c d\n")
        rc = cli_main(["rate", "--hyp", str(tmp_path / "h.txt"),
                       "--ref", str(tmp_path / "r.txt"),
                       "--config", "fig4-gran-g5"])
        out = capsys.readouterr().out.splitlines()
        assert rc == 0
        _, clean, rated = out[0].split("\t")
        # five bins: the rated column sits on a multiple of 0.2
        assert float(rated) == pytest.approx(round(float(rated) * 5) / 5,
                                             abs=1e-9)
        assert float(clean) != float(rated)

    def test_report_builds_sweep_chart(self, tmp_path, capsys):
        for g, delta in ((1, 0.004), (5, 0.011)):
            rows = [{"experiment_id": "e", "preset": f"fig4-gran-g{g}",
                     "seed": "all", "metric": "delta_per_sentence_bleu",
                     "phase": "bandit", "value": delta,
                     "ci_low": delta - 0.003, "ci_high": delta + 0.003}]
            d = tmp_path / "sweep" / f"g{g}"
            d.mkdir(parents=True)
            write_summary_csv(rows, d / "summary.csv")
        rc = cli_main(["report", "--sweep-dir", str(tmp_path / "sweep"),
                       "--out-dir", str(tmp_path / "charts")])
        assert rc == 0
        assert (tmp_path / "charts" / "sweep-gran-g.svg").exists()

    def test_config_errors_exit_one(self, tmp_path, capsys):
        assert cli_main(["bandit-train", "--config", "nope"]) == 1
        assert "config error" in capsys.readouterr().err

        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert cli_main(["bandit-train", "--config", str(bad)]) == 1

        # argparse problems are config errors too, not tracebacks
        assert cli_main(["evaluate", "--config", "smoke"]) == 1

        assert cli_main(["report", "--out-dir", str(tmp_path)]) == 1

    def test_runtime_failure_exits_two(self, tmp_path, capsys):
        config = dataclasses.replace(
            get_preset("smoke"),
            task=TaskSpec(kind="text", src_path=str(tmp_path / "no.src"),
                          tgt_path=str(tmp_path / "no.tgt")))
        save_config(config, tmp_path / "c.json")
        rc = cli_main(["bandit-train", "--config", str(tmp_path / "c.json"),
                       "--out-dir", str(tmp_path / "run")])
        assert rc == 2
        assert "failed" in capsys.readouterr().err
