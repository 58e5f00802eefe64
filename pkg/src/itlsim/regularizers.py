"""Continual-learning strategies applied between and during center visits.

Nine methods share one lifecycle: plain fine-tuning (ft); importance-weighted
parameter anchoring (ewc, si, mas) plus an inverse-importance variant of each;
knowledge distillation (lwf); distillation plus a feature-code constraint
(ebll); and model merging with an L2 pull during training (imm-mean,
imm-mode).

A strategy owns all per-run state. The training loop calls, in order:
on_center_start, then per batch batch_terms (loss-level additions) and
penalty_gradient (gradient-level additions), per optimizer step on_step,
and at the end of the visit on_center_end with the hand-off parameters.
eval_params maps training parameters to the parameters actually evaluated
(identity except for merging methods).

Methods that have nothing to add return None from batch_terms and
penalty_gradient; the caller must then leave the task gradient untouched so
that a zero-strength run is bit-identical to ft.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, optim
from .errors import ConfigurationError, DataError, LifecycleError
from .nn import Params


# ---------------------------------------------------------------------------
# penalty gradients (gradient-level regularizers)
# ---------------------------------------------------------------------------

def importance_penalty_gradient(params: Params, prev: Params, omega: Params, lam: float) -> Params:
    """Gradient of lam * sum Omega_k (theta_prev_k - theta_k)^2 w.r.t. theta.

    The sign pulls theta toward theta_prev when added to the task gradient
    and descended.
    """
    nn.check_aligned(params, prev, "params vs previous snapshot")
    nn.check_aligned(params, omega, "params vs importance")
    return {k: 2.0 * lam * omega[k] * (params[k] - prev[k]) for k in sorted(params)}


def inverse_importance_gradient(params: Params, prev: Params, omega: Params, lam: float) -> Params:
    """Gradient of lam * sum (theta_prev_k - theta_k)^2 / (1 + Omega_k)."""
    nn.check_aligned(params, prev, "params vs previous snapshot")
    nn.check_aligned(params, omega, "params vs importance")
    return {k: 2.0 * lam * (params[k] - prev[k]) / (1.0 + omega[k]) for k in sorted(params)}


def l2_transfer_gradient(params: Params, prev: Params, beta: float) -> Params:
    """Gradient of beta * sum (theta_prev_k - theta_k)^2 w.r.t. theta."""
    nn.check_aligned(params, prev, "params vs previous snapshot")
    return {k: 2.0 * beta * (params[k] - prev[k]) for k in sorted(params)}


# ---------------------------------------------------------------------------
# importance estimation
# ---------------------------------------------------------------------------

def _per_sample_task_dlogits(logits: np.ndarray, labels: np.ndarray, loss_kind: nn.LossKind) -> np.ndarray:
    # gradient of each sample's own loss (batch-mean scaling undone)
    _, dl = nn.task_loss_with_grad(logits, labels, loss_kind)
    return dl * logits.shape[0]


def ewc_fisher(
    model: nn.ModelSpec,
    params: Params,
    inputs: np.ndarray,
    labels: np.ndarray,
    loss_kind: nn.LossKind = nn.CrossEntropy(),
    head_index: int | None = None,
    chunk: int = 256,
) -> Params:
    """Diagonal empirical Fisher: mean squared per-sample loss gradient."""
    if inputs.shape[0] == 0:
        raise DataError("empty sample for importance estimation")
    total = nn.zeros_like_params(params)
    n = inputs.shape[0]
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        batch, lab = inputs[lo:hi], labels[lo:hi]
        logits, cache = nn.forward_cached(model, params, batch, head_index)
        dl = _per_sample_task_dlogits(logits, lab, loss_kind)
        per = nn.backward_from_logits(model, params, cache, dl, per_sample=True)
        for k in total:
            total[k] += (per[k] ** 2).sum(axis=0)
    return {k: total[k] / n for k in sorted(total)}


def mas_importance(
    model: nn.ModelSpec,
    params: Params,
    inputs: np.ndarray,
    head_index: int | None = None,
    chunk: int = 256,
) -> Params:
    """Mean absolute gradient of the squared L2 norm of the logits."""
    if inputs.shape[0] == 0:
        raise DataError("empty sample for importance estimation")
    total = nn.zeros_like_params(params)
    n = inputs.shape[0]
    for lo in range(0, n, chunk):
        batch = inputs[lo:lo + chunk]
        logits, cache = nn.forward_cached(model, params, batch, head_index)
        per = nn.backward_from_logits(model, params, cache, 2.0 * logits, per_sample=True)
        for k in total:
            total[k] += np.abs(per[k]).sum(axis=0)
    return {k: total[k] / n for k in sorted(total)}


# ---------------------------------------------------------------------------
# path-integral importance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiAccumulator:
    """Running per-parameter path integral over one center visit."""

    w: Params
    start: Params


def si_begin_center(params: Params) -> SiAccumulator:
    return SiAccumulator(w=nn.zeros_like_params(params), start=nn.clone_params(params))


def si_track_step(acc: SiAccumulator, g_task: Params, before: Params, after: Params) -> SiAccumulator:
    """w_k += g_k * (theta_after_k - theta_before_k), one optimizer step."""
    nn.check_aligned(acc.w, g_task, "path integral vs gradient")
    nn.check_aligned(before, after, "params before vs after step")
    w = {k: acc.w[k] + g_task[k] * (after[k] - before[k]) for k in sorted(acc.w)}
    return replace(acc, w=w)


def si_update_importance(
    omega: Params, w: Params, theta_start: Params, theta_end: Params, eps: float = 1e-3
) -> Params:
    """Omega_k += max(w_k, 0) / ((theta_end_k - theta_start_k)^2 + eps)."""
    nn.check_aligned(omega, w, "importance vs path integral")
    out = {}
    for k in sorted(omega):
        contribution = w[k] / ((theta_end[k] - theta_start[k]) ** 2 + eps)
        out[k] = omega[k] + np.maximum(contribution, 0.0)
    return out


# ---------------------------------------------------------------------------
# knowledge distillation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TeacherSnapshot:
    params: Params
    temperature: float = 2.0
    produced_after: int = 0


def kd_loss(
    teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float = 2.0
) -> tuple[float, np.ndarray]:
    """Distillation loss between softened distributions, scaled by T^2.

    Returns the loss and its gradient with respect to the student logits;
    the teacher is a constant.
    """
    if teacher_logits.shape != student_logits.shape:
        raise DataError(
            f"teacher logits {teacher_logits.shape} vs student {student_logits.shape}"
        )
    t = temperature
    b = student_logits.shape[0]

    def softened(logits):
        z = logits / t
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return logp

    logp_s = softened(student_logits)
    logp_t = softened(teacher_logits)
    p_t = np.exp(logp_t)
    loss = float(t * t * (-(p_t * logp_s).sum(axis=1)).mean())
    dlogits = t * (np.exp(logp_s) - p_t) / b
    return loss, dlogits


# ---------------------------------------------------------------------------
# feature-code constraint
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderState:
    """Linear encoder plus ReLU-then-linear decoder over feature vectors."""

    enc_weight: np.ndarray
    enc_bias: np.ndarray
    dec_weight: np.ndarray
    dec_bias: np.ndarray
    alpha: float = 1e-3
    degenerate: bool = False
    produced_after: int = 0

    @property
    def code_dim(self) -> int:
        return self.enc_weight.shape[1]

    def encode(self, features: np.ndarray) -> np.ndarray:
        return features @ self.enc_weight + self.enc_bias

    def reconstruct(self, features: np.ndarray) -> np.ndarray:
        return np.maximum(self.encode(features), 0.0) @ self.dec_weight + self.dec_bias


def ebll_code_loss(
    encoder: EncoderState, features_now: np.ndarray, features_prev: np.ndarray
) -> tuple[float, np.ndarray]:
    """alpha/2 times the mean squared code distance; gradient through features_now only."""
    if features_now.shape != features_prev.shape:
        raise DataError(
            f"feature shapes differ: {features_now.shape} vs {features_prev.shape}"
        )
    b = features_now.shape[0]
    diff = encoder.encode(features_now) - encoder.encode(features_prev)
    loss = float(encoder.alpha / 2.0 * (diff ** 2).sum() / b)
    dfeatures = encoder.alpha * (diff @ encoder.enc_weight.T) / b
    return loss, dfeatures


def train_autoencoder(
    features: np.ndarray,
    code_dim: int,
    epochs: int = 50,
    lr: float = 1e-3,
    alpha: float = 1e-3,
    seed: int = 0,
) -> EncoderState:
    """Fit the autoencoder by full-batch Adam on reconstruction MSE.

    Keeps the best parameters seen. Constant (zero-variance) features are
    degenerate: the encoder maps everything to a zero code and is flagged.
    """
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    if code_dim < 1 or code_dim > d:
        raise ConfigurationError(f"code_dim {code_dim} out of range [1, {d}]")
    if n < code_dim + 1:
        raise DataError(f"need at least {code_dim + 1} feature vectors, got {n}")
    mean = features.mean(axis=0)
    if np.allclose(features, mean, atol=1e-12):
        zero = np.zeros((d, code_dim))
        return EncoderState(zero, np.zeros(code_dim), zero.T, mean.copy(),
                            alpha=alpha, degenerate=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xEB11]))
    a_enc = np.sqrt(6.0 / (d + code_dim))
    params: Params = {
        "enc.weight": rng.uniform(-a_enc, a_enc, size=(d, code_dim)),
        # positive bias keeps codes initially active through the ReLU
        "enc.bias": np.ones(code_dim),
        # zero weights + mean bias make the start exactly the mean predictor,
        # so best-seen tracking can only improve on it
        "dec.weight": np.zeros((code_dim, d)),
        "dec.bias": mean.copy(),
    }

    def mse(p):
        code = features @ p["enc.weight"] + p["enc.bias"]
        recon = np.maximum(code, 0.0) @ p["dec.weight"] + p["dec.bias"]
        return float(((recon - features) ** 2).mean()), code, recon

    state = optim.AdamState(lr=lr)
    best_loss, _, _ = mse(params)
    best = nn.clone_params(params)
    for _ in range(epochs):
        loss, code, recon = mse(params)
        dr = 2.0 * (recon - features) / (n * d)
        hidden = np.maximum(code, 0.0)
        grads = {
            "dec.weight": hidden.T @ dr,
            "dec.bias": dr.sum(axis=0),
        }
        dh = (dr @ params["dec.weight"].T) * (code > 0)
        grads["enc.weight"] = features.T @ dh
        grads["enc.bias"] = dh.sum(axis=0)
        state, params = optim.adam_step(state, params, grads)
        loss, _, _ = mse(params)
        if loss < best_loss:
            best_loss, best = loss, nn.clone_params(params)
    return EncoderState(best["enc.weight"], best["enc.bias"],
                        best["dec.weight"], best["dec.bias"], alpha=alpha)


# ---------------------------------------------------------------------------
# model merging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImmEntry:
    params: Params
    fisher: Params | None
    produced_after: int


@dataclass
class ImmArchive:
    """Latest per-center model (and Fisher map, for mode merging)."""

    entries: dict[int, ImmEntry] = field(default_factory=dict)
    beta: float = 0.01

    def ordered(self, upto: int | None = None) -> list[ImmEntry]:
        keys = sorted(self.entries)
        if upto is not None:
            keys = [k for k in keys if k <= upto]
        return [self.entries[k] for k in keys]


def imm_merge_mean(archive: ImmArchive, upto: int | None = None) -> Params:
    """Elementwise arithmetic mean of the archived models."""
    entries = archive.ordered(upto)
    if not entries:
        raise DataError("empty model archive")
    names = sorted(entries[0].params)
    return {k: np.mean(np.stack([e.params[k] for e in entries]), axis=0) for k in names}


def imm_mode_weights(
    archive: ImmArchive, upto: int | None = None, delta: float = 1e-8
) -> tuple[list[Params], list[str]]:
    """Per-parameter merge weights from damped Fisher maps.

    Returns one weight map per archived model plus the names of parameters
    where every center's Fisher is all-zero (uniform fallback applied there).
    """
    entries = archive.ordered(upto)
    if not entries:
        raise DataError("empty model archive")
    n = len(entries)
    names = sorted(entries[0].params)
    weights: list[Params] = [{} for _ in range(n)]
    flagged: list[str] = []
    for k in names:
        fishers = np.stack([_require_fisher(e)[k] for e in entries])
        damped = fishers + delta
        alphas = damped / damped.sum(axis=0)
        equal = np.all(fishers == fishers[0], axis=0)
        if np.all(fishers == 0.0):
            flagged.append(k)
        for i in range(n):
            weights[i][k] = np.where(equal, 1.0 / n, alphas[i])
    return weights, flagged


def _require_fisher(entry: ImmEntry) -> Params:
    if entry.fisher is None:
        raise ConfigurationError("mode merge requires a Fisher map per archived model")
    return entry.fisher


def imm_merge_mode(archive: ImmArchive, upto: int | None = None, delta: float = 1e-8) -> Params:
    """Per-parameter Fisher-weighted convex combination of archived models.

    Where every center reports the same Fisher value the result is the exact
    arithmetic mean, so equal maps reproduce imm_merge_mean bit for bit.
    """
    entries = archive.ordered(upto)
    if not entries:
        raise DataError("empty model archive")
    names = sorted(entries[0].params)
    merged: Params = {}
    for k in names:
        thetas = np.stack([e.params[k] for e in entries])
        fishers = np.stack([_require_fisher(e)[k] for e in entries])
        damped = fishers + delta
        alphas = damped / damped.sum(axis=0)
        value = (alphas * thetas).sum(axis=0)
        equal = np.all(fishers == fishers[0], axis=0)
        if np.any(equal):
            value = np.where(equal, np.mean(thetas, axis=0), value)
        merged[k] = value
    return merged


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchTerms:
    """Loss-level additions for one batch; None fields mean nothing to add."""

    extra_loss: float = 0.0
    dlogits: np.ndarray | None = None
    dfeatures: np.ndarray | None = None


class Strategy:
    """Base lifecycle: fine-tuning (no regularization)."""

    name = "ft"
    needs_teacher_features = False

    def __init__(self, lam: float = 1.0):
        if lam < 0:
            raise ConfigurationError("regularization strength must be >= 0")
        self.lam = lam
        self.centers_completed = 0

    # -- hooks ---------------------------------------------------------
    def on_center_start(self, params: Params) -> None:
        pass

    def penalty_gradient(self, params: Params) -> Params | None:
        return None

    def batch_terms(self, model, params, batch, head_index, logits, features) -> BatchTerms | None:
        return None

    def on_step(self, g_task: Params, before: Params, after: Params) -> None:
        pass

    def on_center_end(self, model, params: Params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        self.centers_completed += 1

    def eval_params(self, params: Params) -> Params:
        return params

    # -- plumbing ------------------------------------------------------
    def _check_artifact(self, produced_after: int, what: str) -> None:
        if produced_after > self.centers_completed:
            raise LifecycleError(
                f"{what} produced after visit {produced_after} consumed during "
                f"visit {self.centers_completed + 1}"
            )

    def export_state(self) -> tuple[dict, Params]:
        return {"name": self.name, "lam": self.lam,
                "centers_completed": self.centers_completed}, {}

    def restore_state(self, meta: dict, tensors: Params) -> None:
        self.lam = meta["lam"]
        self.centers_completed = meta["centers_completed"]


def _pack(tensors: Params, prefix: str, params: Params | None) -> None:
    if params is None:
        return
    for k, v in params.items():
        tensors[f"{prefix}.{k}"] = v


def _unpack(tensors: Params, prefix: str) -> Params | None:
    sub = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
    return sub or None


class ImportanceStrategy(Strategy):
    """Shared anchoring lifecycle for ewc / si / mas and inverse variants."""

    inverse = False

    def __init__(self, lam: float = 1.0):
        super().__init__(lam)
        self.omega: Params | None = None
        self.prev: Params | None = None
        self.prev_produced_after = 0

    def penalty_gradient(self, params: Params) -> Params | None:
        if self.prev is None or self.omega is None or self.lam == 0.0:
            return None
        self._check_artifact(self.prev_produced_after, "importance snapshot")
        if self.inverse:
            return inverse_importance_gradient(params, self.prev, self.omega, self.lam)
        return importance_penalty_gradient(params, self.prev, self.omega, self.lam)

    def _importance_of_center(self, model, params, train_inputs, train_labels,
                              loss_kind, head_index) -> Params:
        raise NotImplementedError

    def on_center_end(self, model, params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        contribution = self._importance_of_center(
            model, params, train_inputs, train_labels, loss_kind, head_index)
        self.omega = contribution if self.omega is None else nn.add_params(self.omega, contribution)
        self.prev = nn.clone_params(params)
        super().on_center_end(model, params, train_inputs, train_labels, loss_kind, head_index)
        self.prev_produced_after = self.centers_completed

    def export_state(self) -> tuple[dict, Params]:
        meta, tensors = super().export_state()
        meta["prev_produced_after"] = self.prev_produced_after
        _pack(tensors, "omega", self.omega)
        _pack(tensors, "prev", self.prev)
        return meta, tensors

    def restore_state(self, meta: dict, tensors: Params) -> None:
        super().restore_state(meta, tensors)
        self.prev_produced_after = meta["prev_produced_after"]
        self.omega = _unpack(tensors, "omega")
        self.prev = _unpack(tensors, "prev")


class EwcStrategy(ImportanceStrategy):
    name = "ewc"

    def _importance_of_center(self, model, params, train_inputs, train_labels,
                              loss_kind, head_index) -> Params:
        return ewc_fisher(model, params, train_inputs, train_labels, loss_kind, head_index)


class MasStrategy(ImportanceStrategy):
    name = "mas"

    def _importance_of_center(self, model, params, train_inputs, train_labels,
                              loss_kind, head_index) -> Params:
        return mas_importance(model, params, train_inputs, head_index)


class SiStrategy(ImportanceStrategy):
    name = "si"

    def __init__(self, lam: float = 1.0, eps: float = 1e-3):
        super().__init__(lam)
        self.eps = eps
        self.acc: SiAccumulator | None = None

    def on_center_start(self, params: Params) -> None:
        self.acc = si_begin_center(params)

    def on_step(self, g_task: Params, before: Params, after: Params) -> None:
        if self.acc is None:
            raise LifecycleError("optimizer step tracked before the center started")
        self.acc = si_track_step(self.acc, g_task, before, after)

    def on_center_end(self, model, params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        if self.acc is None:
            raise LifecycleError("center ended before it started")
        base = self.omega if self.omega is not None else nn.zeros_like_params(params)
        self.omega = si_update_importance(base, self.acc.w, self.acc.start, params, self.eps)
        self.prev = nn.clone_params(params)
        self.acc = None
        Strategy.on_center_end(self, model, params, train_inputs, train_labels,
                               loss_kind, head_index)
        self.prev_produced_after = self.centers_completed

    def _importance_of_center(self, *a, **kw):  # handled in on_center_end
        raise NotImplementedError

    def export_state(self) -> tuple[dict, Params]:
        meta, tensors = super().export_state()
        meta["eps"] = self.eps
        meta["si_active"] = self.acc is not None
        if self.acc is not None:
            _pack(tensors, "si_w", self.acc.w)
            _pack(tensors, "si_start", self.acc.start)
        return meta, tensors

    def restore_state(self, meta: dict, tensors: Params) -> None:
        super().restore_state(meta, tensors)
        self.eps = meta["eps"]
        if meta.get("si_active"):
            self.acc = SiAccumulator(w=_unpack(tensors, "si_w") or {},
                                     start=_unpack(tensors, "si_start") or {})
        else:
            self.acc = None


class EwcInverseStrategy(EwcStrategy):
    name = "ewc-inv"
    inverse = True


class SiInverseStrategy(SiStrategy):
    name = "si-inv"
    inverse = True


class MasInverseStrategy(MasStrategy):
    name = "mas-inv"
    inverse = True


class LwfStrategy(Strategy):
    name = "lwf"

    def __init__(self, lam: float = 1.0, temperature: float = 2.0):
        super().__init__(lam)
        self.temperature = temperature
        self.teacher: TeacherSnapshot | None = None

    def batch_terms(self, model, params, batch, head_index, logits, features) -> BatchTerms | None:
        if self.teacher is None or self.lam == 0.0:
            return None
        self._check_artifact(self.teacher.produced_after, "teacher snapshot")
        teacher_logits = nn.forward(model, self.teacher.params, batch, head_index)
        loss, dlogits = kd_loss(teacher_logits, logits, self.temperature)
        return BatchTerms(extra_loss=self.lam * loss, dlogits=self.lam * dlogits)

    def on_center_end(self, model, params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        super().on_center_end(model, params, train_inputs, train_labels, loss_kind, head_index)
        self.teacher = TeacherSnapshot(nn.clone_params(params), self.temperature,
                                       produced_after=self.centers_completed)

    def export_state(self) -> tuple[dict, Params]:
        meta, tensors = super().export_state()
        meta["temperature"] = self.temperature
        if self.teacher is not None:
            meta["teacher_produced_after"] = self.teacher.produced_after
            _pack(tensors, "teacher", self.teacher.params)
        return meta, tensors

    def restore_state(self, meta: dict, tensors: Params) -> None:
        super().restore_state(meta, tensors)
        self.temperature = meta["temperature"]
        teacher = _unpack(tensors, "teacher")
        if teacher is not None:
            self.teacher = TeacherSnapshot(teacher, self.temperature,
                                           produced_after=meta["teacher_produced_after"])


class EbllStrategy(LwfStrategy):
    name = "ebll"

    def __init__(self, lam: float = 1.0, temperature: float = 2.0, alpha: float = 1e-3,
                 autoencoder_epochs: int = 50, code_fraction: float = 0.25):
        super().__init__(lam, temperature)
        self.alpha = alpha
        self.autoencoder_epochs = autoencoder_epochs
        self.code_fraction = code_fraction
        self.encoder: EncoderState | None = None

    def batch_terms(self, model, params, batch, head_index, logits, features) -> BatchTerms | None:
        base = super().batch_terms(model, params, batch, head_index, logits, features)
        if self.encoder is None or self.alpha == 0.0:
            return base
        self._check_artifact(self.encoder.produced_after, "feature encoder")
        assert self.teacher is not None
        _, teacher_cache = nn.forward_cached(model, self.teacher.params, batch, head_index)
        code_loss, dfeatures = ebll_code_loss(self.encoder, features, teacher_cache.features)
        if base is None:
            return BatchTerms(extra_loss=code_loss, dfeatures=dfeatures)
        return BatchTerms(extra_loss=base.extra_loss + code_loss,
                          dlogits=base.dlogits, dfeatures=dfeatures)

    def on_center_end(self, model, params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        super().on_center_end(model, params, train_inputs, train_labels, loss_kind, head_index)
        _, cache = nn.forward_cached(model, params, train_inputs, head_index)
        feats = cache.features
        code_dim = max(1, int(feats.shape[1] * self.code_fraction))
        encoder = train_autoencoder(feats, code_dim, epochs=self.autoencoder_epochs,
                                    alpha=self.alpha, seed=self.centers_completed)
        self.encoder = replace(encoder, produced_after=self.centers_completed)

    def export_state(self) -> tuple[dict, Params]:
        meta, tensors = super().export_state()
        meta.update(alpha=self.alpha, autoencoder_epochs=self.autoencoder_epochs,
                    code_fraction=self.code_fraction)
        if self.encoder is not None:
            meta["encoder_meta"] = {
                "alpha": self.encoder.alpha,
                "degenerate": self.encoder.degenerate,
                "produced_after": self.encoder.produced_after,
            }
            _pack(tensors, "encoder", {
                "enc_weight": self.encoder.enc_weight,
                "enc_bias": self.encoder.enc_bias,
                "dec_weight": self.encoder.dec_weight,
                "dec_bias": self.encoder.dec_bias,
            })
        return meta, tensors

    def restore_state(self, meta: dict, tensors: Params) -> None:
        super().restore_state(meta, tensors)
        self.alpha = meta["alpha"]
        self.autoencoder_epochs = meta["autoencoder_epochs"]
        self.code_fraction = meta["code_fraction"]
        enc = _unpack(tensors, "encoder")
        if enc is not None:
            em = meta["encoder_meta"]
            self.encoder = EncoderState(enc["enc_weight"], enc["enc_bias"],
                                        enc["dec_weight"], enc["dec_bias"],
                                        alpha=em["alpha"], degenerate=em["degenerate"],
                                        produced_after=em["produced_after"])


class ImmStrategy(Strategy):
    """L2 pull toward the previous model plus post-hoc merging for evaluation."""

    name = "imm-mean"
    mode = False

    def __init__(self, lam: float = 1.0, beta: float = 0.01):
        super().__init__(lam)
        self.beta = beta
        self.archive = ImmArchive(beta=beta)
        self.prev: Params | None = None
        self.prev_produced_after = 0
        self.current_center: int | None = None

    def set_center(self, center_index: int) -> None:
        # archive key for the visit now running; revisits overwrite
        self.current_center = center_index

    def penalty_gradient(self, params: Params) -> Params | None:
        if self.prev is None or self.beta == 0.0 or self.lam == 0.0:
            return None
        self._check_artifact(self.prev_produced_after, "previous model snapshot")
        return l2_transfer_gradient(params, self.prev, self.beta * self.lam)

    def on_center_end(self, model, params, train_inputs, train_labels,
                      loss_kind, head_index) -> None:
        fisher = None
        if self.mode:
            fisher = ewc_fisher(model, params, train_inputs, train_labels,
                                loss_kind, head_index)
        super().on_center_end(model, params, train_inputs, train_labels, loss_kind, head_index)
        key = self.current_center if self.current_center is not None else self.centers_completed
        self.archive.entries[key] = ImmEntry(nn.clone_params(params), fisher,
                                             produced_after=self.centers_completed)
        self.prev = nn.clone_params(params)
        self.prev_produced_after = self.centers_completed

    def eval_params(self, params: Params) -> Params:
        if not self.archive.entries:
            return params
        if self.mode:
            return imm_merge_mode(self.archive)
        return imm_merge_mean(self.archive)

    def export_state(self) -> tuple[dict, Params]:
        meta, tensors = super().export_state()
        meta["beta"] = self.beta
        meta["prev_produced_after"] = self.prev_produced_after
        meta["current_center"] = self.current_center
        meta["archive_keys"] = sorted(self.archive.entries)
        meta["archive_produced_after"] = {
            str(k): e.produced_after for k, e in self.archive.entries.items()
        }
        _pack(tensors, "prev", self.prev)
        for k, e in self.archive.entries.items():
            _pack(tensors, f"archive.{k}.params", e.params)
            _pack(tensors, f"archive.{k}.fisher", e.fisher)
        return meta, tensors

    def restore_state(self, meta: dict, tensors: Params) -> None:
        super().restore_state(meta, tensors)
        self.beta = meta["beta"]
        self.prev_produced_after = meta["prev_produced_after"]
        self.current_center = meta["current_center"]
        self.prev = _unpack(tensors, "prev")
        self.archive = ImmArchive(beta=self.beta)
        for k in meta["archive_keys"]:
            params = _unpack(tensors, f"archive.{k}.params")
            fisher = _unpack(tensors, f"archive.{k}.fisher")
            produced = meta["archive_produced_after"][str(k)]
            self.archive.entries[k] = ImmEntry(params or {}, fisher, produced)


class ImmModeStrategy(ImmStrategy):
    name = "imm-mode"
    mode = True


METHODS = ("ft", "ewc", "si", "mas", "mas-inv", "lwf", "ebll", "imm-mean", "imm-mode")
EXTRA_METHODS = ("ewc-inv", "si-inv")

_REGISTRY = {
    cls.name: cls for cls in (
        Strategy, EwcStrategy, SiStrategy, MasStrategy,
        EwcInverseStrategy, SiInverseStrategy, MasInverseStrategy,
        LwfStrategy, EbllStrategy, ImmStrategy, ImmModeStrategy,
    )
}


def make_strategy(name: str, lam: float = 1.0, **kwargs) -> Strategy:
    if name not in _REGISTRY:
        valid = ", ".join(sorted(_REGISTRY))
        raise ConfigurationError(f"unknown method {name!r}; valid: {valid}")
    return _REGISTRY[name](lam=lam, **kwargs)


def restore_strategy(meta: dict, tensors: Params) -> Strategy:
    strategy = make_strategy(meta["name"], lam=meta["lam"])
    strategy.restore_state(meta, tensors)
    return strategy
