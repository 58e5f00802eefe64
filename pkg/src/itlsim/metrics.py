"""Accuracy sequences, monotonicity, repeat aggregation, significance, emission.

An accuracy matrix holds one row per center and one column per center visit;
cell (mu, i) is the accuracy (percent) of the shared model on center mu's
test split after the i-th visit. Missing cells (centers that cannot be
evaluated yet) are NaN.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DataError

YES_PLUS = "Yes+"
YES_MINUS = "Yes-"
NO = "No"


@dataclass(frozen=True)
class AccuracyMatrix:
    values: np.ndarray  # (n_centers, n_visits), percent, NaN = missing

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"accuracy matrix must be 2-d, got shape {v.shape}")
        finite = v[np.isfinite(v)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 100.0):
            raise DataError("accuracies must lie in [0, 100]")
        object.__setattr__(self, "values", v)

    @property
    def n_centers(self) -> int:
        return self.values.shape[0]

    @property
    def n_visits(self) -> int:
        return self.values.shape[1]


def mean_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean of the final column: the final model averaged over center tests."""
    final = matrix.values[:, -1]
    if np.isnan(final).any():
        raise DataError("final column has missing cells")
    return float(final.mean())


def monotonicity(matrix: AccuracyMatrix) -> float:
    """Fraction of adjacent visit pairs that did not decrease accuracy.

    Ties count as non-decreasing. Pairs with a missing cell are excluded
    from both numerator and denominator.
    """
    if matrix.n_visits < 2:
        raise DataError("monotonicity needs at least two visits")
    a = matrix.values
    prev, curr = a[:, :-1], a[:, 1:]
    valid = np.isfinite(prev) & np.isfinite(curr)
    if not valid.any():
        raise DataError("no adjacent visit pair is fully populated")
    good = (curr >= prev) & valid
    return float(good.sum() / valid.sum())


@dataclass(frozen=True)
class Significance:
    verdict: str  # Yes+ / Yes- / No
    p_value: float


def significance_vs_ft(method_means: list[float], ft_means: list[float],
                       alpha: float = 0.05) -> Significance:
    """Two-sided Welch t-test on per-repeat mean accuracies."""
    a = np.sort(np.asarray(method_means, dtype=np.float64))
    b = np.sort(np.asarray(ft_means, dtype=np.float64))
    if a.size < 2 or b.size < 2:
        raise DataError("significance needs at least two repeats per side")
    if a.size == b.size and np.array_equal(a, b):
        return Significance(NO, 1.0)
    if a.var() == 0.0 and b.var() == 0.0:
        # degenerate but different constants: direction is unambiguous
        return Significance(YES_PLUS if a.mean() > b.mean() else YES_MINUS, 0.0)
    p = float(stats.ttest_ind(a, b, equal_var=False).pvalue)
    if p < alpha:
        return Significance(YES_PLUS if a.mean() > b.mean() else YES_MINUS, p)
    return Significance(NO, p)


@dataclass(frozen=True)
class RunRecord:
    """One (method, scenario, seed) run's evaluation matrix."""

    method: str
    scenario: str
    seed: int
    matrix: AccuracyMatrix
    config_hash: str = ""


@dataclass(frozen=True)
class Summary:
    method: str
    scenario: str
    repeats: int
    accuracy_mean: float
    accuracy_std: float
    monotonicity_mean: float
    significance: str
    p_value: float
    single_repeat: bool
    config_hash: str = ""


def aggregate(records: list[RunRecord]) -> dict:
    """Repeat-level aggregates for one (method, scenario) group."""
    if not records:
        raise DataError("nothing to aggregate")
    a_means = [mean_accuracy(r.matrix) for r in records]
    # single-visit matrices (reference baselines) have no transfer pairs
    m_means = [monotonicity(r.matrix) for r in records
               if r.matrix.n_visits >= 2]
    single = len(records) == 1
    return {
        "repeats": len(records),
        "accuracy_mean": float(np.mean(a_means)),
        "accuracy_std": 0.0 if single else float(np.std(a_means, ddof=1)),
        "monotonicity_mean": float(np.mean(m_means)) if m_means else math.nan,
        "single_repeat": single,
        "per_repeat_accuracy": a_means,
    }


def summarize(records: list[RunRecord], ft_method: str = "ft") -> list[Summary]:
    """Per-(method, scenario) table with significance against the ft group."""
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.scenario), []).append(r)
    out = []
    for (method, scenario) in sorted(groups):
        group = sorted(groups[(method, scenario)], key=lambda r: r.seed)
        agg = aggregate(group)
        verdict, p = NO, 1.0
        ft_group = groups.get((ft_method, scenario))
        if ft_group is not None and method != ft_method and len(group) >= 2 \
                and len(ft_group) >= 2:
            sig = significance_vs_ft(agg["per_repeat_accuracy"],
                                     [mean_accuracy(r.matrix) for r in ft_group])
            verdict, p = sig.verdict, sig.p_value
        out.append(Summary(
            method=method, scenario=scenario, repeats=agg["repeats"],
            accuracy_mean=agg["accuracy_mean"], accuracy_std=agg["accuracy_std"],
            monotonicity_mean=agg["monotonicity_mean"],
            significance=verdict, p_value=p, single_repeat=agg["single_repeat"],
            config_hash=group[0].config_hash,
        ))
    return out


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

RUN_COLUMNS = ("method", "scenario", "seed", "center", "visit_index", "accuracy",
               "config_hash")
SUMMARY_COLUMNS = ("method", "scenario", "repeats", "accuracy_mean", "accuracy_std",
                   "monotonicity_mean", "significance", "p_value", "single_repeat",
                   "config_hash")


def _float_repr(x: float) -> str:
    return repr(float(x))


def records_to_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    for r in records:
        for center in range(r.matrix.n_centers):
            for visit in range(r.matrix.n_visits):
                value = r.matrix.values[center, visit]
                rows.append({
                    "method": r.method, "scenario": r.scenario, "seed": r.seed,
                    "center": center + 1, "visit_index": visit + 1,
                    "accuracy": "" if math.isnan(value) else _float_repr(value),
                    "config_hash": r.config_hash,
                })
    return rows


def emit_runs_csv(records: list[RunRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RUN_COLUMNS)
            writer.writeheader()
            writer.writerows(records_to_rows(records))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    return path


def emit_summary_csv(summaries: list[Summary], path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            writer.writeheader()
            for s in summaries:
                writer.writerow({
                    "method": s.method, "scenario": s.scenario, "repeats": s.repeats,
                    "accuracy_mean": _float_repr(s.accuracy_mean),
                    "accuracy_std": _float_repr(s.accuracy_std),
                    "monotonicity_mean": _float_repr(s.monotonicity_mean),
                    "significance": s.significance, "p_value": _float_repr(s.p_value),
                    "single_repeat": int(s.single_repeat),
                    "config_hash": s.config_hash,
                })
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    return path


def records_to_json(records: list[RunRecord]) -> str:
    payload = [{
        "method": r.method, "scenario": r.scenario, "seed": r.seed,
        "config_hash": r.config_hash,
        "matrix": [[None if math.isnan(v) else v for v in row]
                   for row in r.matrix.values.tolist()],
    } for r in records]
    return json.dumps(payload, indent=2)


def records_from_json(text: str) -> list[RunRecord]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid results JSON: {exc}") from None
    records = []
    for item in payload:
        matrix = np.array([[math.nan if v is None else float(v) for v in row]
                           for row in item["matrix"]], dtype=np.float64)
        records.append(RunRecord(
            method=item["method"], scenario=item["scenario"], seed=int(item["seed"]),
            matrix=AccuracyMatrix(matrix), config_hash=item.get("config_hash", ""),
        ))
    return records


def emit_runs_json(records: list[RunRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(records_to_json(records))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    return path


def load_runs(path: str | Path) -> list[RunRecord]:
    """Read run records back from a runs.json or runs.csv file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"results file not found: {path}")
    if path.suffix == ".json":
        return records_from_json(path.read_text())
    cells: dict[tuple[str, str, int], dict] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(RUN_COLUMNS) - set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {RUN_COLUMNS}")
        for row in reader:
            key = (row["method"], row["scenario"], int(row["seed"]))
            entry = cells.setdefault(key, {"hash": row["config_hash"], "cells": {}})
            value = math.nan if row["accuracy"] == "" else float(row["accuracy"])
            entry["cells"][(int(row["center"]), int(row["visit_index"]))] = value
    records = []
    for (method, scenario, seed), entry in sorted(cells.items()):
        keys = entry["cells"].keys()
        n_centers = max(k[0] for k in keys)
        n_visits = max(k[1] for k in keys)
        values = np.full((n_centers, n_visits), math.nan)
        for (center, visit), value in entry["cells"].items():
            values[center - 1, visit - 1] = value
        records.append(RunRecord(method, scenario, seed, AccuracyMatrix(values),
                                 entry["hash"]))
    return records
