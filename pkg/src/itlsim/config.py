"""Experiment configuration: JSON schema, validation, hashing, builders.

A config file is a single JSON object. Every key is optional; defaults give
a desk-scale experiment (synthetic 10-class task, 5 centers, cyclic
transfer, 10 repeats). Unknown keys anywhere are rejected, and validation
reports every violation, not just the first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .data import (CenterDataset, apply_noise, load_external,
                   make_synthetic_task, reorder_centers)
from .errors import ValidationError
from .federation import RunSettings
from .nn import CrossEntropy, Dense, ModelSpec, MultiHead, ReLU, SingleHead
from .regularizers import EXTRA_METHODS, METHODS

VALID_METHODS = tuple(sorted(METHODS + EXTRA_METHODS))
BUDGET_POLICIES = ("schedule-total", "single-center")


@dataclass(frozen=True)
class Scenario:
    name: str
    noisy_centers: tuple[int, ...] = ()
    sigma: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    task_kind: str = "synthetic"            # "synthetic" | "external"
    num_classes: int = 10
    dim: int = 32
    per_class_counts: tuple[int, int, int] = (80, 20, 10)
    manifest: str | None = None
    centers: int = 5
    schedule_kind: str = "cwt"              # "swt" | "cwt"
    epochs_per_center: int = 50
    e_transfer: int = 10
    iterations: int = 5
    methods: tuple[str, ...] = METHODS
    head: str = "single"                    # "single" | "multi"
    hidden: tuple[int, ...] = (64,)
    optimizer_kind: str = "adam"
    learning_rate: float | None = None
    reload_optimizer: bool = True
    lr_grid_search: bool = False
    lam_default: float = 1.0
    lam_per_method: tuple[tuple[str, float], ...] = ()
    repeats: int = 10
    seed_base: int = 0
    scenarios: tuple[Scenario, ...] = (Scenario("iid"),)
    center_order: tuple[int, ...] | None = None
    baseline_joint: bool = False
    baseline_individual: bool = False
    baseline_budget: str = "schedule-total"
    batch_size: int = 100
    e_val: int = 5
    e_stop: int = 20
    min_improvement: float = 1e-6
    hash: str = ""

    def lambda_for(self, method: str) -> float:
        for name, value in self.lam_per_method:
            if name == method:
                return value
        return self.lam_default

    @property
    def total_schedule_epochs(self) -> int:
        if self.schedule_kind == "swt":
            return self.centers * self.epochs_per_center
        return self.centers * self.iterations * self.e_transfer

    @property
    def baseline_epochs(self) -> int:
        if self.baseline_budget == "single-center":
            return (self.epochs_per_center if self.schedule_kind == "swt"
                    else self.e_transfer * self.iterations)
        return self.total_schedule_epochs


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def _check_keys(doc: dict, allowed: tuple[str, ...], path: str,
                violations: list[str]) -> None:
    for key in doc:
        if key not in allowed:
            violations.append(
                f"{path}{key}: unknown key (valid: {', '.join(allowed)})")


def _get_int(doc, key, path, violations, default, lo=None, hi=None):
    value = doc.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        violations.append(f"{path}{key}: expected an integer, got {value!r}")
        return default
    if lo is not None and value < lo:
        violations.append(f"{path}{key}: must be >= {lo}, got {value}")
        return default
    if hi is not None and value > hi:
        violations.append(f"{path}{key}: must be <= {hi}, got {value}")
        return default
    return value


def _get_number(doc, key, path, violations, default, lo=None):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        violations.append(f"{path}{key}: expected a number, got {value!r}")
        return default
    if lo is not None and value < lo:
        violations.append(f"{path}{key}: must be >= {lo}, got {value}")
        return default
    return float(value)


def _get_bool(doc, key, path, violations, default):
    value = doc.get(key, default)
    if not isinstance(value, bool):
        violations.append(f"{path}{key}: expected true or false, got {value!r}")
        return default
    return value


def _get_choice(doc, key, path, violations, default, choices):
    value = doc.get(key, default)
    if value not in choices:
        violations.append(
            f"{path}{key}: must be one of {', '.join(map(str, choices))}; "
            f"got {value!r}")
        return default
    return value


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_TOP_KEYS = ("task", "centers", "schedule", "methods", "head", "model",
             "optimizer", "lambda", "repeats", "seed_base", "scenarios",
             "center_order", "baselines", "training")


def validate_config(doc: dict) -> tuple[ExperimentConfig, list[str]]:
    """Normalize a raw JSON object; returns the config and all violations."""
    violations: list[str] = []
    if not isinstance(doc, dict):
        return ExperimentConfig(), [f"top level: expected an object, got "
                                    f"{type(doc).__name__}"]
    _check_keys(doc, _TOP_KEYS, "", violations)

    task = doc.get("task", {})
    if not isinstance(task, dict):
        violations.append("task: expected an object")
        task = {}
    _check_keys(task, ("kind", "num_classes", "dim", "per_class_counts",
                       "manifest"), "task.", violations)
    task_kind = _get_choice(task, "kind", "task.", violations, "synthetic",
                            ("synthetic", "external"))
    num_classes = _get_int(task, "num_classes", "task.", violations, 10, lo=2)
    dim = _get_int(task, "dim", "task.", violations, 32, lo=1)
    counts = task.get("per_class_counts", [80, 20, 10])
    if (not isinstance(counts, list) or len(counts) != 3
            or any(not isinstance(c, int) or c < 1 for c in counts)):
        violations.append("task.per_class_counts: expected three positive "
                          f"integers [train, val, test], got {counts!r}")
        counts = [80, 20, 10]
    manifest = task.get("manifest")
    if task_kind == "external" and not isinstance(manifest, str):
        violations.append("task.manifest: external tasks need a manifest path")
    if task_kind == "synthetic" and manifest is not None:
        violations.append("task.manifest: only valid for external tasks")

    centers = _get_int(doc, "centers", "", violations, 5, lo=1)

    schedule = doc.get("schedule", {})
    if not isinstance(schedule, dict):
        violations.append("schedule: expected an object")
        schedule = {}
    _check_keys(schedule, ("kind", "epochs_per_center", "e_transfer",
                           "iterations"), "schedule.", violations)
    schedule_kind = _get_choice(schedule, "kind", "schedule.", violations,
                                "cwt", ("swt", "cwt"))
    epochs_per_center = _get_int(schedule, "epochs_per_center", "schedule.",
                                 violations, 50, lo=1)
    e_transfer = _get_int(schedule, "e_transfer", "schedule.", violations, 10,
                          lo=1)
    iterations = _get_int(schedule, "iterations", "schedule.", violations, 5,
                          lo=1)

    methods = doc.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods:
        violations.append("methods: expected a non-empty list")
        methods = list(METHODS)
    else:
        for m in methods:
            if m not in VALID_METHODS:
                violations.append(f"methods: unknown method {m!r} (valid: "
                                  f"{', '.join(VALID_METHODS)})")
        if len(set(methods)) != len(methods):
            violations.append("methods: duplicate entries")
        methods = [m for m in methods if m in VALID_METHODS] or list(METHODS)

    head = _get_choice(doc, "head", "", violations, "single",
                       ("single", "multi"))

    model = doc.get("model", {})
    if not isinstance(model, dict):
        violations.append("model: expected an object")
        model = {}
    _check_keys(model, ("hidden",), "model.", violations)
    hidden = model.get("hidden", [64])
    if (not isinstance(hidden, list) or not hidden
            or any(not isinstance(h, int) or h < 1 for h in hidden)):
        violations.append("model.hidden: expected a non-empty list of "
                          f"positive integers, got {hidden!r}")
        hidden = [64]

    optimizer = doc.get("optimizer", {})
    if not isinstance(optimizer, dict):
        violations.append("optimizer: expected an object")
        optimizer = {}
    _check_keys(optimizer, ("kind", "learning_rate", "reload",
                            "lr_grid_search"), "optimizer.", violations)
    optimizer_kind = _get_choice(optimizer, "kind", "optimizer.", violations,
                                 "adam", ("adam", "sgd"))
    learning_rate = optimizer.get("learning_rate")
    if learning_rate is not None:
        if isinstance(learning_rate, bool) or \
                not isinstance(learning_rate, (int, float)) or learning_rate <= 0:
            violations.append("optimizer.learning_rate: expected a positive "
                              f"number, got {learning_rate!r}")
            learning_rate = None
        else:
            learning_rate = float(learning_rate)
    reload_optimizer = _get_bool(optimizer, "reload", "optimizer.", violations,
                                 True)
    lr_grid_search = _get_bool(optimizer, "lr_grid_search", "optimizer.",
                               violations, False)

    lam = doc.get("lambda", 1.0)
    lam_default, lam_per_method = 1.0, ()
    if isinstance(lam, bool):
        violations.append(f"lambda: expected a number or an object, got {lam!r}")
    elif isinstance(lam, (int, float)):
        if lam < 0:
            violations.append(f"lambda: must be >= 0, got {lam}")
        else:
            lam_default = float(lam)
    elif isinstance(lam, dict):
        pairs = []
        for name, value in lam.items():
            if name not in VALID_METHODS:
                violations.append(f"lambda.{name}: unknown method (valid: "
                                  f"{', '.join(VALID_METHODS)})")
            elif isinstance(value, bool) or not isinstance(value, (int, float)) \
                    or value < 0:
                violations.append(f"lambda.{name}: must be a number >= 0, "
                                  f"got {value!r}")
            else:
                pairs.append((name, float(value)))
        lam_per_method = tuple(sorted(pairs))
    else:
        violations.append(f"lambda: expected a number or an object, got {lam!r}")

    repeats = _get_int(doc, "repeats", "", violations, 10, lo=1)
    seed_base = _get_int(doc, "seed_base", "", violations, 0, lo=0)

    raw_scenarios = doc.get("scenarios", [{"name": "iid"}])
    scenarios: list[Scenario] = []
    if not isinstance(raw_scenarios, list) or not raw_scenarios:
        violations.append("scenarios: expected a non-empty list")
        raw_scenarios = [{"name": "iid"}]
    for i, raw in enumerate(raw_scenarios):
        path = f"scenarios[{i}]."
        if not isinstance(raw, dict):
            violations.append(f"scenarios[{i}]: expected an object")
            continue
        _check_keys(raw, ("name", "noisy_centers", "sigma"), path, violations)
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            violations.append(f"{path}name: every scenario needs a name")
            name = f"scenario{i}"
        sigma = _get_number(raw, "sigma", path, violations, 0.0, lo=0.0)
        noisy = raw.get("noisy_centers", [])
        if not isinstance(noisy, list) or \
                any(not isinstance(c, int) or isinstance(c, bool) for c in noisy):
            violations.append(f"{path}noisy_centers: expected a list of "
                              f"center indices, got {noisy!r}")
            noisy = []
        else:
            for c in noisy:
                if not 1 <= c <= centers:
                    violations.append(f"{path}noisy_centers: center {c} "
                                      f"outside 1..{centers}")
            noisy = [c for c in noisy if 1 <= c <= centers]
        scenarios.append(Scenario(name, tuple(noisy), sigma))
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        violations.append("scenarios: names must be unique")

    center_order = doc.get("center_order")
    if center_order is not None:
        if (not isinstance(center_order, list)
                or sorted(center_order) != list(range(1, centers + 1))):
            violations.append("center_order: expected a permutation of "
                              f"1..{centers}, got {center_order!r}")
            center_order = None
        else:
            center_order = tuple(center_order)

    baselines = doc.get("baselines", {})
    if not isinstance(baselines, dict):
        violations.append("baselines: expected an object")
        baselines = {}
    _check_keys(baselines, ("joint", "individual", "budget"), "baselines.",
                violations)
    baseline_joint = _get_bool(baselines, "joint", "baselines.", violations,
                               False)
    baseline_individual = _get_bool(baselines, "individual", "baselines.",
                                    violations, False)
    baseline_budget = _get_choice(baselines, "budget", "baselines.",
                                  violations, "schedule-total",
                                  BUDGET_POLICIES)

    training = doc.get("training", {})
    if not isinstance(training, dict):
        violations.append("training: expected an object")
        training = {}
    _check_keys(training, ("batch_size", "e_val", "e_stop",
                           "min_improvement"), "training.", violations)
    batch_size = _get_int(training, "batch_size", "training.", violations,
                          100, lo=1)
    e_val = _get_int(training, "e_val", "training.", violations, 5, lo=1)
    e_stop = _get_int(training, "e_stop", "training.", violations, 20, lo=1)
    min_improvement = _get_number(training, "min_improvement", "training.",
                                  violations, 1e-6, lo=0.0)

    if head == "multi" and baseline_joint:
        violations.append("baselines.joint: pooled training needs a single "
                          "shared head")

    config = ExperimentConfig(
        task_kind=task_kind, num_classes=num_classes, dim=dim,
        per_class_counts=tuple(counts),
        manifest=manifest if task_kind == "external" else None,
        centers=centers, schedule_kind=schedule_kind,
        epochs_per_center=epochs_per_center, e_transfer=e_transfer,
        iterations=iterations, methods=tuple(methods), head=head,
        hidden=tuple(hidden), optimizer_kind=optimizer_kind,
        learning_rate=learning_rate, reload_optimizer=reload_optimizer,
        lr_grid_search=lr_grid_search, lam_default=lam_default,
        lam_per_method=lam_per_method, repeats=repeats, seed_base=seed_base,
        scenarios=tuple(scenarios), center_order=center_order,
        baseline_joint=baseline_joint, baseline_individual=baseline_individual,
        baseline_budget=baseline_budget, batch_size=batch_size, e_val=e_val,
        e_stop=e_stop, min_improvement=min_improvement)
    return _with_hash(config), violations


def _with_hash(config: ExperimentConfig) -> ExperimentConfig:
    from dataclasses import asdict, replace
    normalized = asdict(replace(config, hash=""))
    digest = hashlib.sha256(
        json.dumps(normalized, sort_keys=True).encode("utf-8")).hexdigest()
    return replace(config, hash=digest[:12])


def override(config: ExperimentConfig, **fields) -> ExperimentConfig:
    """Replace fields and refresh the identifying hash to match."""
    from dataclasses import replace
    return _with_hash(replace(config, **fields))


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError([f"config file not found: {path}"])
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError([f"{path}: invalid JSON: {exc}"]) from None
    config, violations = validate_config(doc)
    if violations:
        raise ValidationError(violations)
    return config


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_datasets(config: ExperimentConfig,
                   scenario: Scenario) -> list[CenterDataset]:
    """Deterministic datasets for one scenario (fixed across repeats)."""
    if config.task_kind == "external":
        datasets = load_external(config.manifest)
        for c in scenario.noisy_centers:
            if not 1 <= c <= len(datasets):
                raise ValidationError(
                    [f"scenario {scenario.name}: noisy center {c} outside "
                     f"1..{len(datasets)}"])
    else:
        datasets = make_synthetic_task(
            num_classes=config.num_classes, dim=config.dim,
            per_center_counts=config.per_class_counts,
            n_centers=config.centers, seed=config.seed_base)
    for c in scenario.noisy_centers:
        datasets[c - 1] = apply_noise(datasets[c - 1], scenario.sigma,
                                      seed=config.seed_base)
    if config.center_order is not None:
        datasets = reorder_centers(datasets, list(config.center_order))
    return datasets


def build_model(config: ExperimentConfig) -> ModelSpec:
    feature_layers: list = []
    in_dim = config.dim
    for width in config.hidden:
        feature_layers.append(Dense(in_dim, width))
        feature_layers.append(ReLU())
        in_dim = width
    head_setting = MultiHead(config.centers) if config.head == "multi" \
        else SingleHead()
    return ModelSpec(feature_layers=tuple(feature_layers),
                     head_layers=(Dense(in_dim, config.num_classes),),
                     head_setting=head_setting)


def build_settings(config: ExperimentConfig, method: str,
                   seed: int) -> RunSettings:
    return RunSettings(
        optimizer=config.optimizer_kind, learning_rate=config.learning_rate,
        batch_size=config.batch_size, lam=config.lambda_for(method),
        loss=CrossEntropy(), reload_optimizer=config.reload_optimizer,
        lr_grid_search=config.lr_grid_search, e_val=config.e_val,
        e_stop=config.e_stop, min_improvement=config.min_improvement,
        seed=seed, config_hash=config.hash)
