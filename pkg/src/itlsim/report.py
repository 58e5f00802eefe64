"""Result reporting: summary tables and accuracy-curve figures.

This is the only module that renders plots; the metrics module stays a
pure data layer. Figures are PNG files written next to the delimited
output.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402
from .metrics import (NO, RunRecord, Summary, aggregate, emit_summary_csv,  # noqa: E402
                      load_runs, mean_accuracy, significance_vs_ft, summarize)

INDIVIDUAL = "it"          # per-center isolated models, global-test accuracy
INDIVIDUAL_LOCAL = "it-local"  # same models scored only on their own center


def _individual_summaries(records: list[RunRecord],
                          ft_means: dict[str, list[float]]) -> list[Summary]:
    """Dual-report rows for isolated per-center training.

    The run matrix for `it` holds one column per center-trained model, so
    the global score is the matrix mean and the local score its diagonal.
    """
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.scenario, []).append(r)
    out = []
    for scenario in sorted(groups):
        group = sorted(groups[scenario], key=lambda r: r.seed)
        global_means = [float(r.matrix.values.mean()) for r in group]
        local_means = [float(np.diag(r.matrix.values).mean()) for r in group]
        single = len(group) == 1
        verdict, p = NO, 1.0
        ft = ft_means.get(scenario)
        if ft is not None and len(group) >= 2 and len(ft) >= 2:
            sig = significance_vs_ft(global_means, ft)
            verdict, p = sig.verdict, sig.p_value
        common = dict(scenario=scenario, repeats=len(group),
                      monotonicity_mean=math.nan, single_repeat=single,
                      config_hash=group[0].config_hash)
        out.append(Summary(
            method=INDIVIDUAL, accuracy_mean=float(np.mean(global_means)),
            accuracy_std=0.0 if single else float(np.std(global_means, ddof=1)),
            significance=verdict, p_value=p, **common))
        out.append(Summary(
            method=INDIVIDUAL_LOCAL, accuracy_mean=float(np.mean(local_means)),
            accuracy_std=0.0 if single else float(np.std(local_means, ddof=1)),
            significance=NO, p_value=1.0, **common))
    return out


def build_summaries(records: list[RunRecord]) -> list[Summary]:
    """Per-(method, scenario) table; isolated training gets dual rows."""
    regular = [r for r in records if r.method != INDIVIDUAL]
    individual = [r for r in records if r.method == INDIVIDUAL]
    summaries = summarize(regular)
    if individual:
        ft_means: dict[str, list[float]] = {}
        for scenario in {r.scenario for r in individual}:
            ft_group = [r for r in regular
                        if r.method == "ft" and r.scenario == scenario]
            if ft_group:
                ft_means[scenario] = [mean_accuracy(r.matrix)
                                      for r in ft_group]
        summaries = summaries + _individual_summaries(individual, ft_means)
    return sorted(summaries, key=lambda s: (s.scenario, s.method))


def write_summary_json(summaries: list[Summary], path: str | Path) -> Path:
    path = Path(path)
    payload = [{
        "method": s.method, "scenario": s.scenario, "repeats": s.repeats,
        "accuracy_mean": s.accuracy_mean, "accuracy_std": s.accuracy_std,
        "monotonicity_mean": None if math.isnan(s.monotonicity_mean)
        else s.monotonicity_mean,
        "significance": s.significance, "p_value": s.p_value,
        "single_repeat": s.single_repeat, "config_hash": s.config_hash,
    } for s in summaries]
    path.write_text(json.dumps(payload, indent=2))
    return path


def format_summary_table(summaries: list[Summary]) -> str:
    header = (f"{'method':<10} {'scenario':<12} {'accuracy':>16} "
              f"{'monotonicity':>12} {'vs ft':>6}")
    lines = [header, "-" * len(header)]
    for s in summaries:
        mono = "-" if math.isnan(s.monotonicity_mean) \
            else f"{s.monotonicity_mean:.3f}"
        flag = "*" if s.single_repeat else ""
        lines.append(f"{s.method:<10} {s.scenario:<12} "
                     f"{s.accuracy_mean:>8.2f} ± {s.accuracy_std:<5.2f}{flag} "
                     f"{mono:>12} {s.significance:>6}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", name) or "scenario"


def _column_means(values: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.nanmean(values, axis=0)


def render_curves(records: list[RunRecord], out_dir: str | Path) -> list[Path]:
    """One accuracy-over-visits figure per scenario.

    Multi-visit methods are drawn as mean curves over seeds; single-visit
    references (pooled training) appear as horizontal lines. Isolated
    per-center training is summarized by its global mean.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = sorted({r.scenario for r in records})
    written = []
    for scenario in scenarios:
        in_scenario = [r for r in records if r.scenario == scenario]
        methods = sorted({r.method for r in in_scenario})
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for method in methods:
            group = [r for r in in_scenario if r.method == method]
            if method == INDIVIDUAL:
                level = float(np.mean([r.matrix.values.mean() for r in group]))
                ax.axhline(level, linestyle=":", linewidth=1.2, color="gray",
                           label=f"{method} (global)")
                continue
            per_seed = np.stack([_column_means(r.matrix.values)
                                 for r in group])
            mean_curve = per_seed.mean(axis=0)
            if mean_curve.size == 1:
                ax.axhline(float(mean_curve[0]), linestyle="--",
                           linewidth=1.2, label=method)
                continue
            visits = np.arange(1, mean_curve.size + 1)
            ax.plot(visits, mean_curve, marker="o", markersize=3,
                    linewidth=1.4, label=method)
            if per_seed.shape[0] > 1:
                spread = per_seed.std(axis=0, ddof=1)
                ax.fill_between(visits, mean_curve - spread,
                                mean_curve + spread, alpha=0.15)
        ax.set_xlabel("center visit")
        ax.set_ylabel("mean accuracy over centers (%)")
        ax.set_title(f"scenario: {scenario}")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"curve-{_safe_name(scenario)}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def write_report(results_dir: str | Path, fmt: str = "csv") -> dict[str, list[Path]]:
    """Summarize a results directory: tables plus curve figures."""
    results_dir = Path(results_dir)
    runs_path = None
    for candidate in ("runs.json", "runs.csv"):
        if (results_dir / candidate).exists():
            runs_path = results_dir / candidate
            break
    if runs_path is None:
        raise DataError(f"no runs.json or runs.csv in {results_dir}")
    records = load_runs(runs_path)
    if not records:
        raise DataError(f"{runs_path} holds no run records")
    summaries = build_summaries(records)
    if fmt == "json":
        summary_path = write_summary_json(summaries,
                                          results_dir / "summary.json")
    else:
        summary_path = emit_summary_csv(summaries, results_dir / "summary.csv")
    figures = render_curves(records, results_dir)
    return {"summary": [summary_path], "figures": figures}


__all__ = ["build_summaries", "write_summary_json", "format_summary_table",
           "render_curves", "write_report", "aggregate", "INDIVIDUAL",
           "INDIVIDUAL_LOCAL"]
