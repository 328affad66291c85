"""Artifact writers: run logs and summaries as CSV, charts as SVG.

CSV numbers are rendered with repr-stable formatting so a deterministic
run produces byte-identical files. The SVGs are built with ElementTree,
which guarantees well-formed XML; no plotting dependency.
"""

from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from pathlib import Path

RECORD_FIELDS = ("seed", "phase", "step", "online_reward", "heldout_bleu",
                 "critic_loss", "wall_clock")
SUMMARY_FIELDS = ("experiment_id", "preset", "seed", "metric", "phase",
                  "value", "ci_low", "ci_high")

# A colorblind-safe cycle; seeds beyond eight wrap around.
PALETTE = ("#0072b2", "#d55e00", "#009e73", "#cc79a7",
           "#f0e442", "#56b4e9", "#e69f00", "#000000")


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return f"{v:.10g}"


def write_records_csv(records, path) -> None:
    """One row per RunRecord plus a header; empty input -> header only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.seed, r.phase, r.step, _num(r.online_reward),
                        _num(r.heldout_bleu), _num(r.critic_loss),
                        _num(r.wall_clock)])


def write_summary_csv(rows, path) -> None:
    """Canonically sorted summary; byte-identical across reruns and
    invariant to the order seeds were executed in."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def sort_key(row):
        seed = row["seed"]
        return (row["metric"], row["phase"],
                1 if seed == "all" else 0,
                int(seed) if seed != "all" else 0)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for row in sorted(rows, key=sort_key):
            w.writerow([row["experiment_id"], row["preset"], row["seed"],
                        row["metric"], row["phase"], _num(row["value"]),
                        _num(row["ci_low"]), _num(row["ci_high"])])


def _svg_root(width, height):
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width),
                  height=str(height), fill="white")
    return svg


def _axes(svg, box, x_label, y_label):
    x0, y0, x1, y1 = box
    ET.SubElement(svg, "line", x1=str(x0), y1=str(y1), x2=str(x1), y2=str(y1),
                  stroke="black")
    ET.SubElement(svg, "line", x1=str(x0), y1=str(y0), x2=str(x0), y2=str(y1),
                  stroke="black")
    xt = ET.SubElement(svg, "text", x=str((x0 + x1) / 2), y=str(y1 + 32),
                       fill="black")
    xt.set("text-anchor", "middle")
    xt.set("font-size", "12")
    xt.text = x_label
    yt = ET.SubElement(svg, "text", x=str(x0 - 34), y=str((y0 + y1) / 2),
                       fill="black",
                       transform=f"rotate(-90 {x0 - 34} {(y0 + y1) / 2})")
    yt.set("text-anchor", "middle")
    yt.set("font-size", "12")
    yt.text = y_label


def _tick(svg, x, y, text, anchor="middle"):
    t = ET.SubElement(svg, "text", x=str(x), y=str(y), fill="black")
    t.set("text-anchor", anchor)
    t.set("font-size", "10")
    t.text = text


def render_reward_svg(records, path, width=640, height=400) -> None:
    """Online reward against bandit step, one polyline per seed."""
    by_seed: dict = {}
    for r in records:
        if r.phase == "bandit" and r.online_reward is not None:
            by_seed.setdefault(r.seed, []).append((r.step, r.online_reward))
    svg = _svg_root(width, height)
    box = (56, 16, width - 16, height - 48)
    x0, y0, x1, y1 = box
    _axes(svg, box, "bandit step", "online reward")
    if by_seed:
        max_step = max(s for pts in by_seed.values() for s, _ in pts)
        max_step = max(max_step, 1)
        for k, frac in ((0, 0.0), (1, 0.5), (2, 1.0)):
            _tick(svg, x0 + frac * (x1 - x0), y1 + 14, f"{frac * max_step:.0f}")
            _tick(svg, x0 - 6, y1 - frac * (y1 - y0) + 4, f"{frac:.1f}",
                  anchor="end")
        for i, seed in enumerate(sorted(by_seed)):
            pts = sorted(by_seed[seed])
            coords = " ".join(
                f"{x0 + (s / max_step) * (x1 - x0):.1f},"
                f"{y1 - rew * (y1 - y0):.1f}" for s, rew in pts)
            ET.SubElement(svg, "polyline", points=coords, fill="none",
                          stroke=PALETTE[i % len(PALETTE)],
                          **{"stroke-width": "1.5"})
            _tick(svg, x1 - 8, y0 + 14 + 12 * i, f"seed {seed}", anchor="end")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(path, xml_declaration=True, encoding="unicode")


def render_sweep_svg(entries, path, param_label, metric_label="delta per-sentence BLEU",
                     width=640, height=400) -> None:
    """Mean with CI whiskers against a sweep parameter.

    `entries` is a list of (param_value, mean, ci_low, ci_high); points
    are spaced evenly in sweep order with the raw values as tick labels,
    which keeps mixed-decade sweeps readable without log-axis machinery.
    """
    entries = sorted(entries, key=lambda e: e[0])
    svg = _svg_root(width, height)
    box = (64, 16, width - 16, height - 48)
    x0, y0, x1, y1 = box
    _axes(svg, box, param_label, metric_label)
    if entries:
        lo = min(min(e[2] for e in entries), 0.0)
        hi = max(max(e[3] for e in entries), 0.0)
        span = (hi - lo) or 1.0
        lo -= 0.05 * span
        hi += 0.05 * span
        span = hi - lo

        def sx(i):
            if len(entries) == 1:
                return (x0 + x1) / 2
            return x0 + i * (x1 - x0) / (len(entries) - 1)

        def sy(v):
            return y1 - (v - lo) / span * (y1 - y0)

        zero_y = sy(0.0)
        ET.SubElement(svg, "line", x1=str(x0), y1=f"{zero_y:.1f}",
                      x2=str(x1), y2=f"{zero_y:.1f}", stroke="#bbbbbb",
                      **{"stroke-dasharray": "4 3"})
        coords = " ".join(f"{sx(i):.1f},{sy(m):.1f}"
                          for i, (_, m, _, _) in enumerate(entries))
        ET.SubElement(svg, "polyline", points=coords, fill="none",
                      stroke=PALETTE[0], **{"stroke-width": "1.5"})
        for i, (param, mean, clo, chi) in enumerate(entries):
            x = sx(i)
            ET.SubElement(svg, "line", x1=f"{x:.1f}", y1=f"{sy(clo):.1f}",
                          x2=f"{x:.1f}", y2=f"{sy(chi):.1f}",
                          stroke=PALETTE[0])
            for v in (clo, chi):
                ET.SubElement(svg, "line", x1=f"{x - 4:.1f}", y1=f"{sy(v):.1f}",
                              x2=f"{x + 4:.1f}", y2=f"{sy(v):.1f}",
                              stroke=PALETTE[0])
            ET.SubElement(svg, "circle", cx=f"{x:.1f}", cy=f"{sy(mean):.1f}",
                          r="3", fill=PALETTE[0])
            _tick(svg, x, y1 + 14, f"{param:g}")
        for frac in (0.0, 0.5, 1.0):
            v = lo + frac * span
            _tick(svg, x0 - 6, sy(v) + 4, f"{v:.3g}", anchor="end")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(path, xml_declaration=True, encoding="unicode")


def emit_report(records, fmt, out_dir, summary_rows=None) -> list:
    """Write the requested artifact(s); returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        write_records_csv(records, out / "records.csv")
        written.append(out / "records.csv")
        if summary_rows is not None:
            write_summary_csv(summary_rows, out / "summary.csv")
            written.append(out / "summary.csv")
    elif fmt == "svg":
        render_reward_svg(records, out / "reward_vs_step.svg")
        written.append(out / "reward_vs_step.svg")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written
