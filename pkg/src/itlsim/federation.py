"""Peer-to-peer training orchestration.

A run visits centers according to a transfer schedule, trains the shared
model at each visit with an overfitting monitor (learning-rate halving,
early stopping, best-validation selection), and hands the best-validation
model to the next center. After every visit the shared model is evaluated
on each center's test split, filling one column of the accuracy matrix.

Determinism: every stochastic draw comes from a stateless stream keyed by
(run seed, purpose, visit index, epoch), so a run resumed from a boundary
checkpoint reproduces the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import (Checkpoint, Provenance, decode_checkpoint,
                         make_checkpoint, restore_from, save_checkpoint)
from .data import CenterDataset, Split, balanced_batches, pool_train
from .errors import ConfigurationError, DataError, NumericalError
from .metrics import AccuracyMatrix
from .nn import (CrossEntropy, Dice, LossKind, ModelSpec, MultiHead, Params,
                 SingleHead, backward_from_logits, clone_params, forward,
                 forward_cached, init_params, task_loss_with_grad)
from .optim import (AdamState, OptimizerState, SgdState, fresh_like,
                    halve_learning_rate, inject_regularized_gradient,
                    optimizer_step, sgd_advance_epoch)
from .regularizers import Strategy, make_strategy

_BATCH_STREAM = 0xBA7C  # purpose tag for batch-sampling seed sequences

CONTINUE = "continue"
HALVE_LR = "halve-lr"
EARLY_STOP = "early-stop"

LR_GRID = (0.1, 0.01, 0.001, 0.0001)


# ---------------------------------------------------------------------------
# overfitting monitor
# ---------------------------------------------------------------------------


@dataclass
class OverfitMonitor:
    """Validation-loss watchdog for one center visit.

    Improvement means a strict decrease of at least `min_improvement`;
    smaller decreases still update the best checkpoint (it must track the
    minimum seen) but do not reset the streaks. The halving and stopping
    streaks are independent: halving resets only its own streak.
    """

    e_val: int = 5
    e_stop: int = 20
    min_improvement: float = 1e-6
    best_val_loss: float = math.inf
    best_params: Params | None = None
    best_optimizer: OptimizerState | None = None
    halve_streak: int = 0
    stop_streak: int = 0


def prime_monitor(monitor: OverfitMonitor, val_loss: float, params: Params,
                  optimizer: OptimizerState) -> None:
    """Seed the baseline with the incoming model, before any training."""
    monitor.best_val_loss = val_loss
    monitor.best_params = params
    monitor.best_optimizer = optimizer


def monitor_epoch(monitor: OverfitMonitor, val_loss: float,
                  params: Params | None = None,
                  optimizer: OptimizerState | None = None) -> str:
    if math.isnan(val_loss):
        raise NumericalError("validation loss is NaN")
    improved = (math.isfinite(monitor.best_val_loss)
                and monitor.best_val_loss - val_loss >= monitor.min_improvement)
    if val_loss < monitor.best_val_loss:
        monitor.best_val_loss = val_loss
        monitor.best_params = params
        monitor.best_optimizer = optimizer
    if improved:
        monitor.halve_streak = 0
        monitor.stop_streak = 0
        return CONTINUE
    monitor.halve_streak += 1
    monitor.stop_streak += 1
    if monitor.stop_streak >= monitor.e_stop:
        return EARLY_STOP
    if monitor.halve_streak >= monitor.e_val:
        monitor.halve_streak = 0
        return HALVE_LR
    return CONTINUE


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _forward_chunked(model: ModelSpec, params: Params, inputs: np.ndarray,
                     head_index: int | None, chunk: int = 512) -> np.ndarray:
    if inputs.shape[0] <= chunk:
        return forward(model, params, inputs, head_index)
    pieces = [forward(model, params, inputs[i:i + chunk], head_index)
              for i in range(0, inputs.shape[0], chunk)]
    return np.concatenate(pieces)


def evaluate_loss(model: ModelSpec, params: Params, split: Split,
                  loss_kind: LossKind = CrossEntropy(),
                  head_index: int | None = None) -> float:
    logits = _forward_chunked(model, params, split.inputs, head_index)
    loss, _ = task_loss_with_grad(logits, split.labels, loss_kind)
    return loss


def evaluate_accuracy(model: ModelSpec, params: Params, split: Split,
                      loss_kind: LossKind = CrossEntropy(),
                      head_index: int | None = None) -> float:
    """Percent correct on a split (thresholded overlap for mask targets)."""
    logits = _forward_chunked(model, params, split.inputs, head_index)
    if isinstance(loss_kind, Dice):
        predicted = 1.0 / (1.0 + np.exp(-logits)) > 0.5
        return float((predicted == (split.labels > 0.5)).mean() * 100.0)
    return float((logits.argmax(axis=1) == split.labels).mean() * 100.0)


# ---------------------------------------------------------------------------
# one center visit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CenterOutcome:
    params: Params              # best-validation parameters of the visit
    optimizer: OptimizerState   # optimizer state accompanying them
    epochs_ran: int
    early_stopped: bool
    best_val_loss: float


def _batch_rng(run_seed: int, visit_index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([run_seed, _BATCH_STREAM, visit_index, epoch]))


def train_at_center(model: ModelSpec, params: Params, optimizer: OptimizerState,
                    strategy: Strategy, dataset: CenterDataset, *,
                    epochs: int, batch_size: int = 100,
                    loss_kind: LossKind = CrossEntropy(),
                    head_index: int | None = None, run_seed: int = 0,
                    visit_index: int = 0, e_val: int = 5, e_stop: int = 20,
                    min_improvement: float = 1e-6) -> CenterOutcome:
    """Train one visit and return the best-validation model and optimizer."""
    if epochs < 1:
        raise ConfigurationError("a visit must train for at least one epoch")
    train, val = dataset.train, dataset.val
    batches_per_epoch = max(1, math.ceil(train.size / batch_size))
    monitor = OverfitMonitor(e_val=e_val, e_stop=e_stop,
                             min_improvement=min_improvement)
    prime_monitor(monitor,
                  evaluate_loss(model, params, val, loss_kind, head_index),
                  params, optimizer)
    epochs_ran, early_stopped = 0, False
    for epoch in range(1, epochs + 1):
        rng = _batch_rng(run_seed, visit_index, epoch)
        for batch, labels in balanced_batches(train, batch_size, rng,
                                              batches_per_epoch):
            logits, cache = forward_cached(model, params, batch, head_index)
            task_loss, dlogits = task_loss_with_grad(logits, labels, loss_kind)
            if not math.isfinite(task_loss):
                raise NumericalError(f"training loss became {task_loss}")
            terms = strategy.batch_terms(model, params, batch, head_index,
                                         logits, cache.features)
            dfeatures = None
            if terms is not None:
                if terms.dlogits is not None:
                    dlogits = dlogits + terms.dlogits
                dfeatures = terms.dfeatures
            grads = backward_from_logits(model, params, cache, dlogits,
                                         dfeatures_extra=dfeatures)
            penalty = strategy.penalty_gradient(params)
            total = grads if penalty is None else \
                inject_regularized_gradient(grads, penalty)
            before = params
            optimizer, params = optimizer_step(optimizer, params, total)
            strategy.on_step(grads, before, params)
        if isinstance(optimizer, SgdState):
            optimizer = sgd_advance_epoch(optimizer)
        val_loss = evaluate_loss(model, params, val, loss_kind, head_index)
        if not math.isfinite(val_loss):
            raise NumericalError(f"validation loss became {val_loss}")
        epochs_ran = epoch
        action = monitor_epoch(monitor, val_loss, params, optimizer)
        if action == HALVE_LR:
            optimizer = halve_learning_rate(optimizer)
        elif action == EARLY_STOP:
            early_stopped = True
            break
    return CenterOutcome(params=monitor.best_params,
                         optimizer=monitor.best_optimizer,
                         epochs_ran=epochs_ran, early_stopped=early_stopped,
                         best_val_loss=monitor.best_val_loss)


# ---------------------------------------------------------------------------
# hand-off
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingContext:
    params: Params
    optimizer: OptimizerState
    strategy: Strategy
    head_index: int | None


def handoff(checkpoint: Checkpoint | bytes, next_center: int, *,
            reload_optimizer: bool = True,
            head_setting: SingleHead | MultiHead = SingleHead(),
            learning_rate: float | None = None) -> TrainingContext:
    """Prepare the training context for the next center.

    Reload keeps the optimizer state verbatim (moments, step count, epoch,
    halving); reset builds a fresh optimizer of the same kind. Transfer
    never mutates the checkpointed parameters.
    """
    if isinstance(checkpoint, (bytes, bytearray)):
        checkpoint = decode_checkpoint(bytes(checkpoint))
    params, optimizer, strategy = restore_from(checkpoint)
    if not reload_optimizer:
        optimizer = fresh_like(optimizer, lr=learning_rate)
    head_index = None
    if isinstance(head_setting, MultiHead):
        if not 1 <= next_center <= head_setting.num_centers:
            raise ConfigurationError(
                f"center {next_center} outside the {head_setting.num_centers}"
                " configured heads")
        head_index = next_center - 1
    return TrainingContext(params=clone_params(params), optimizer=optimizer,
                           strategy=strategy, head_index=head_index)


# ---------------------------------------------------------------------------
# schedules and runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    optimizer: str = "adam"              # "adam" | "sgd"
    learning_rate: float | None = None   # None = optimizer default
    batch_size: int = 100
    lam: float = 1.0
    loss: LossKind = CrossEntropy()
    reload_optimizer: bool = True        # False = fresh optimizer per hand-off
    lr_grid_search: bool = False         # probe LR_GRID at the first center
    e_val: int = 5
    e_stop: int = 20
    min_improvement: float = 1e-6
    seed: int = 0
    config_hash: str = ""
    method_options: dict = field(default_factory=dict)


def _make_optimizer(settings: RunSettings,
                    lr: float | None = None) -> OptimizerState:
    lr = lr if lr is not None else settings.learning_rate
    if settings.optimizer == "adam":
        return AdamState() if lr is None else AdamState(lr=lr)
    if settings.optimizer == "sgd":
        return SgdState() if lr is None else SgdState(base_lr=lr)
    raise ConfigurationError(
        f"unknown optimizer {settings.optimizer!r}; valid: adam, sgd")


def swt_visits(n_centers: int, epochs_per_center: int = 50) -> list[tuple[int, int]]:
    return [(center, epochs_per_center) for center in range(1, n_centers + 1)]


def cwt_visits(n_centers: int, e_transfer: int = 10,
               iterations: int = 5) -> list[tuple[int, int]]:
    if iterations < 1:
        raise ConfigurationError("cyclic transfer needs at least one iteration")
    return [(center, e_transfer)
            for _ in range(iterations)
            for center in range(1, n_centers + 1)]


@dataclass(frozen=True)
class ResumeState:
    """Everything needed to continue a run from a visit boundary."""

    checkpoint: Checkpoint
    visits_done: int
    matrix_values: np.ndarray


@dataclass(frozen=True)
class RunResult:
    method: str
    schedule: str
    seed: int
    matrix: AccuracyMatrix
    final_params: Params
    final_eval_params: Params
    resume: ResumeState
    visits_completed: int
    failed: bool = False
    failure: str | None = None


def grid_search_lr(model: ModelSpec, params: Params, dataset: CenterDataset,
                   settings: RunSettings, head_index: int | None = None,
                   probe_epochs: int = 2) -> float:
    """Pick the grid learning rate with the best validation loss after a
    short probe at the first center. Ties keep the larger rate."""
    best_lr, best_loss = LR_GRID[0], math.inf
    for lr in LR_GRID:
        outcome = train_at_center(
            model, params, _make_optimizer(settings, lr=lr),
            Strategy(lam=0.0), dataset, epochs=probe_epochs,
            batch_size=settings.batch_size, loss_kind=settings.loss,
            head_index=head_index, run_seed=settings.seed, visit_index=0,
            e_val=settings.e_val, e_stop=settings.e_stop,
            min_improvement=settings.min_improvement)
        if outcome.best_val_loss < best_loss:
            best_lr, best_loss = lr, outcome.best_val_loss
    return best_lr


def _check_centers(model: ModelSpec, datasets: list[CenterDataset]) -> None:
    if not datasets:
        raise ConfigurationError("at least one center is required")
    for position, dataset in enumerate(datasets, start=1):
        if dataset.center != position:
            raise DataError(
                f"dataset at position {position} is labeled center "
                f"{dataset.center}")
    if isinstance(model.head_setting, MultiHead) and \
            model.num_heads < len(datasets):
        raise ConfigurationError(
            f"{model.num_heads} heads for {len(datasets)} centers")


def _run_schedule(model: ModelSpec, datasets: list[CenterDataset], method: str,
                  settings: RunSettings, visits: list[tuple[int, int]],
                  schedule: str, *, stop_after_visits: int | None = None,
                  resume_state: ResumeState | None = None,
                  checkpoint_dir: str | Path | None = None) -> RunResult:
    _check_centers(model, datasets)
    n_centers, n_visits = len(datasets), len(visits)
    for center, _ in visits:
        if not 1 <= center <= n_centers:
            raise ConfigurationError(f"visit to unknown center {center}")
    multihead = isinstance(model.head_setting, MultiHead)
    matrix = np.full((n_centers, n_visits), np.nan)
    if resume_state is not None:
        params, optimizer, strategy = restore_from(resume_state.checkpoint)
        if strategy.name != method:
            raise ConfigurationError(
                f"checkpoint carries method {strategy.name!r}, run wants "
                f"{method!r}")
        if resume_state.matrix_values.shape != matrix.shape:
            raise ConfigurationError(
                f"resume matrix shape {resume_state.matrix_values.shape} does "
                f"not match the schedule shape {matrix.shape}")
        start = resume_state.visits_done
        matrix[:, :start] = resume_state.matrix_values[:, :start]
    else:
        params = init_params(model, settings.seed)
        optimizer = _make_optimizer(settings)
        strategy = make_strategy(method, lam=settings.lam,
                                 **settings.method_options)
        start = 0
    visited = {visits[i][0] for i in range(start)}
    loss_kind = settings.loss
    boundary: Checkpoint | None = None
    completed = start
    failed, failure = False, None
    current_center, current_visit = 0, start
    try:
        for v in range(start, n_visits):
            center_idx, epochs = visits[v]
            current_center, current_visit = center_idx, v
            dataset = datasets[center_idx - 1]
            head_index = center_idx - 1 if multihead else None
            if v > 0 and not settings.reload_optimizer:
                optimizer = fresh_like(optimizer)
            if v == 0 and settings.lr_grid_search:
                lr = grid_search_lr(model, params, dataset, settings,
                                    head_index)
                optimizer = _make_optimizer(settings, lr=lr)
            set_center = getattr(strategy, "set_center", None)
            if set_center is not None:
                set_center(center_idx)
            strategy.on_center_start(params)
            outcome = train_at_center(
                model, params, optimizer, strategy, dataset, epochs=epochs,
                batch_size=settings.batch_size, loss_kind=loss_kind,
                head_index=head_index, run_seed=settings.seed, visit_index=v,
                e_val=settings.e_val, e_stop=settings.e_stop,
                min_improvement=settings.min_improvement)
            params, optimizer = outcome.params, outcome.optimizer
            strategy.on_center_end(model, params, dataset.train.inputs,
                                   dataset.train.labels, loss_kind, head_index)
            visited.add(center_idx)
            eval_params = strategy.eval_params(params)
            for mu in range(1, n_centers + 1):
                if multihead and mu not in visited:
                    continue
                matrix[mu - 1, v] = evaluate_accuracy(
                    model, eval_params, datasets[mu - 1].test, loss_kind,
                    mu - 1 if multihead else None)
            completed = v + 1
            boundary = make_checkpoint(
                params, optimizer, strategy,
                Provenance(center=center_idx, visit=completed,
                           epoch=outcome.epochs_ran, seed=settings.seed,
                           config_hash=settings.config_hash))
            if checkpoint_dir is not None:
                target = Path(checkpoint_dir)
                target.mkdir(parents=True, exist_ok=True)
                save_checkpoint(boundary, target / f"visit-{completed:03d}")
            if stop_after_visits is not None and completed >= stop_after_visits:
                break
    except NumericalError as exc:
        failed = True
        failure = (f"{exc} at center {current_center}, visit "
                   f"{current_visit + 1}, seed {settings.seed}")
    if boundary is None:
        boundary = make_checkpoint(
            params, optimizer, strategy,
            Provenance(seed=settings.seed, config_hash=settings.config_hash))
    try:
        final_eval = strategy.eval_params(params)
    except Exception:
        final_eval = params
    return RunResult(
        method=method, schedule=schedule, seed=settings.seed,
        matrix=AccuracyMatrix(matrix), final_params=params,
        final_eval_params=final_eval,
        resume=ResumeState(checkpoint=boundary, visits_done=completed,
                           matrix_values=matrix.copy()),
        visits_completed=completed, failed=failed, failure=failure)


def run_swt(model: ModelSpec, datasets: list[CenterDataset], method: str,
            settings: RunSettings, *, epochs_per_center: int = 50,
            stop_after_visits: int | None = None,
            resume_state: ResumeState | None = None,
            checkpoint_dir: str | Path | None = None) -> RunResult:
    """One pass over the centers in order, full epoch budget at each."""
    visits = swt_visits(len(datasets), epochs_per_center)
    return _run_schedule(model, datasets, method, settings, visits, "swt",
                         stop_after_visits=stop_after_visits,
                         resume_state=resume_state,
                         checkpoint_dir=checkpoint_dir)


def run_cwt(model: ModelSpec, datasets: list[CenterDataset], method: str,
            settings: RunSettings, *, e_transfer: int = 10,
            iterations: int = 5, stop_after_visits: int | None = None,
            resume_state: ResumeState | None = None,
            checkpoint_dir: str | Path | None = None) -> RunResult:
    """Ring schedule: `iterations` passes, `e_transfer` epochs per visit."""
    visits = cwt_visits(len(datasets), e_transfer, iterations)
    return _run_schedule(model, datasets, method, settings, visits, "cwt",
                         stop_after_visits=stop_after_visits,
                         resume_state=resume_state,
                         checkpoint_dir=checkpoint_dir)


# ---------------------------------------------------------------------------
# reference baselines (no transfer)
# ---------------------------------------------------------------------------


def _pooled_dataset(datasets: list[CenterDataset]) -> CenterDataset:
    first = datasets[0]
    pooled_val = Split(
        np.concatenate([ds.val.inputs for ds in datasets]),
        np.concatenate([ds.val.labels for ds in datasets]))
    return CenterDataset(
        center=1, source_center=0, train=pool_train(datasets), val=pooled_val,
        test=pooled_val, heterogeneity=first.heterogeneity,
        fractions=first.fractions, value_range=first.value_range,
        num_classes=first.num_classes)


def run_joint(model: ModelSpec, datasets: list[CenterDataset],
              settings: RunSettings, *, epochs: int = 50) -> RunResult:
    """Upper reference: train once on all centers' data pooled together."""
    _check_centers(model, datasets)
    if isinstance(model.head_setting, MultiHead):
        raise ConfigurationError("pooled training uses a single shared head")
    pooled = _pooled_dataset(datasets)
    params = init_params(model, settings.seed)
    strategy = make_strategy("ft")
    optimizer = _make_optimizer(settings)
    if settings.lr_grid_search:
        lr = grid_search_lr(model, params, pooled, settings, None)
        optimizer = _make_optimizer(settings, lr=lr)
    outcome = train_at_center(
        model, params, optimizer, strategy, pooled, epochs=epochs,
        batch_size=settings.batch_size, loss_kind=settings.loss,
        head_index=None, run_seed=settings.seed, visit_index=0,
        e_val=settings.e_val, e_stop=settings.e_stop,
        min_improvement=settings.min_improvement)
    strategy.on_center_end(model, outcome.params, pooled.train.inputs,
                           pooled.train.labels, settings.loss, None)
    matrix = np.full((len(datasets), 1), np.nan)
    for mu, dataset in enumerate(datasets):
        matrix[mu, 0] = evaluate_accuracy(model, outcome.params, dataset.test,
                                          settings.loss, None)
    boundary = make_checkpoint(
        outcome.params, outcome.optimizer, strategy,
        Provenance(center=0, visit=1, epoch=outcome.epochs_ran,
                   seed=settings.seed, config_hash=settings.config_hash))
    return RunResult(
        method="joint", schedule="joint", seed=settings.seed,
        matrix=AccuracyMatrix(matrix), final_params=outcome.params,
        final_eval_params=outcome.params,
        resume=ResumeState(boundary, 1, matrix.copy()), visits_completed=1)


def run_individual(model: ModelSpec, datasets: list[CenterDataset],
                   settings: RunSettings, *,
                   epochs: int = 50) -> list[RunResult]:
    """Lower reference: each center trains alone, evaluated everywhere."""
    _check_centers(model, datasets)
    results = []
    for dataset in datasets:
        result = _run_schedule(model, datasets, "ft", settings,
                               [(dataset.center, epochs)], "individual")
        results.append(result)
    return results
