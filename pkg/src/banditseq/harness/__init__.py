"""Experiment harness: configuration, execution, measurement, reporting."""

from .config import (ExperimentConfig, ModelSpec, TaskSpec, build_presets,
                     get_preset, load_config, save_config)
from .metrics import (confidence_interval, delta_metric, heldout_bleu_metric,
                      per_sentence_bleu_metric)
from .report import (emit_report, render_reward_svg, render_sweep_svg,
                     write_records_csv, write_summary_csv)
from .runner import (ExperimentResult, RunRecord, SeedResult,
                     experiment_identity, run_experiment, run_seed, summarize)

__all__ = [
    "ExperimentConfig", "ModelSpec", "TaskSpec", "build_presets",
    "get_preset", "load_config", "save_config",
    "confidence_interval", "delta_metric", "heldout_bleu_metric",
    "per_sentence_bleu_metric",
    "emit_report", "render_reward_svg", "render_sweep_svg",
    "write_records_csv", "write_summary_csv",
    "ExperimentResult", "RunRecord", "SeedResult", "experiment_identity",
    "run_experiment", "run_seed", "summarize",
]
