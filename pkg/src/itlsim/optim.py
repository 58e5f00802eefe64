"""SGD with an exponential epoch schedule and Adam with bias-corrected moments.

Both optimizers are functional: a step takes (state, params, grad) and returns
a fresh (state, params) pair, leaving the inputs untouched. Full state is
plain data so it can be serialized and reloaded across center hand-offs with
a bit-exact trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import nn
from .errors import NumericalError
from .nn import Params


@dataclass(frozen=True)
class SgdState:
    base_lr: float = 0.1
    decay_base: float = 0.8
    decay_period_epochs: float = 5.0
    epoch: int = 0
    halving: float = 1.0

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.decay_base ** (self.epoch / self.decay_period_epochs) * self.halving


@dataclass(frozen=True)
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr: float = 0.001
    halving: float = 1.0

    @property
    def effective_lr(self) -> float:
        return self.lr * self.halving


OptimizerState = Union[SgdState, AdamState]


def _check_finite(grad: Params) -> None:
    for name in sorted(grad):
        if not np.all(np.isfinite(grad[name])):
            raise NumericalError(f"non-finite gradient entry in {name!r}")


def adam_step(state: AdamState, params: Params, grad: Params) -> tuple[AdamState, Params]:
    """One Adam update with bias-corrected first and second moments."""
    nn.check_aligned(params, grad, "params vs grad")
    if state.m:
        nn.check_aligned(state.m, params, "adam moments vs params")
    _check_finite(grad)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    lr = state.effective_lr
    m_new: Params = {}
    v_new: Params = {}
    out: Params = {}
    for name in sorted(params):
        g = grad[name]
        m_prev = state.m.get(name, 0.0)
        v_prev = state.v.get(name, 0.0)
        m = b1 * m_prev + (1.0 - b1) * g
        v = b2 * v_prev + (1.0 - b2) * g * g
        m_new[name] = np.asarray(m, dtype=np.float64)
        v_new[name] = np.asarray(v, dtype=np.float64)
        out[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return replace(state, m=m_new, v=v_new, t=t), out


def sgd_step(state: SgdState, params: Params, grad: Params) -> tuple[SgdState, Params]:
    """One SGD update at the schedule's current effective rate."""
    nn.check_aligned(params, grad, "params vs grad")
    _check_finite(grad)
    lr = state.effective_lr
    out = {name: params[name] - lr * grad[name] for name in sorted(params)}
    return state, out


def optimizer_step(state: OptimizerState, params: Params, grad: Params) -> tuple[OptimizerState, Params]:
    if isinstance(state, AdamState):
        return adam_step(state, params, grad)
    return sgd_step(state, params, grad)


def sgd_advance_epoch(state: SgdState, epochs: int = 1) -> SgdState:
    """Advance the schedule clock; the effective rate decays as 0.8^(e/5)."""
    return replace(state, epoch=state.epoch + epochs)


def inject_regularized_gradient(grad: Params, reg_grad: Params) -> Params:
    """Elementwise g' = g + reg; moments downstream see g', not g."""
    nn.check_aligned(grad, reg_grad, "grad vs reg_grad")
    return {name: grad[name] + reg_grad[name] for name in sorted(grad)}


def halve_learning_rate(state: OptimizerState) -> OptimizerState:
    """Multiply the effective rate by 0.5; moment statistics untouched."""
    return replace(state, halving=state.halving * 0.5)


def fresh_like(state: OptimizerState, lr: float | None = None) -> OptimizerState:
    """New-optimizer hand-off: reset step count, moments, schedule, halving."""
    if isinstance(state, AdamState):
        return AdamState(beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon,
                         lr=state.lr if lr is None else lr)
    return SgdState(base_lr=state.base_lr if lr is None else lr,
                    decay_base=state.decay_base,
                    decay_period_epochs=state.decay_period_epochs)
