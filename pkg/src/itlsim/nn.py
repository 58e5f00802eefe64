"""Minimal dense/convolutional network core with hand-derived reverse-mode gradients.

Tensors are plain float64 numpy arrays, batch-major. A parameter set is an
ordered mapping from name to array; two parameter sets are "aligned" when they
share names and shapes. Models are split into a feature extractor and one or
more classifier heads so that heads can be swapped or re-initialized without
touching feature parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import AlignmentError, ConfigurationError, DataError

Params = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# layer and model specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    seed: int = 0


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kernel: int
    seed: int = 0


@dataclass(frozen=True)
class MaxPool2D:
    kernel: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2D, MaxPool2D, ReLU, Flatten]


@dataclass(frozen=True)
class SingleHead:
    pass


@dataclass(frozen=True)
class MultiHead:
    num_centers: int


HeadSetting = Union[SingleHead, MultiHead]


@dataclass(frozen=True)
class ModelSpec:
    """Feature extractor plus classifier head(s).

    Under MultiHead there is one identically shaped head per center; a batch
    is always routed through exactly one head.
    """

    feature_layers: tuple[Layer, ...]
    head_layers: tuple[Layer, ...]
    head_setting: HeadSetting = SingleHead()

    @property
    def num_heads(self) -> int:
        if isinstance(self.head_setting, MultiHead):
            return self.head_setting.num_centers
        return 1


@dataclass(frozen=True)
class CrossEntropy:
    pass


@dataclass(frozen=True)
class Dice:
    smoothing: float = 1.0


LossKind = Union[CrossEntropy, Dice]


# ---------------------------------------------------------------------------
# parameter-set helpers
# ---------------------------------------------------------------------------

def check_aligned(a: Params, b: Params, what: str = "parameter sets") -> None:
    """Raise AlignmentError unless a and b share names and shapes."""
    if a.keys() != b.keys():
        missing = sorted(set(a) ^ set(b))
        raise AlignmentError(f"{what} differ in names: {missing[:6]}")
    for name in a:
        if a[name].shape != b[name].shape:
            raise AlignmentError(
                f"{what} differ in shape at {name!r}: "
                f"{a[name].shape} vs {b[name].shape}"
            )


def param_names(params: Params) -> list[str]:
    return sorted(params)


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(params[k]) for k in sorted(params)}


def clone_params(params: Params) -> Params:
    return {k: params[k].copy() for k in sorted(params)}


def add_params(a: Params, b: Params) -> Params:
    check_aligned(a, b)
    return {k: a[k] + b[k] for k in sorted(a)}


def scale_params(a: Params, c: float) -> Params:
    return {k: c * a[k] for k in sorted(a)}


def params_equal(a: Params, b: Params) -> bool:
    """Bit-exact equality (names, shapes, and values)."""
    if a.keys() != b.keys():
        return False
    return all(
        a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a
    )


def max_abs_diff(a: Params, b: Params) -> float:
    check_aligned(a, b)
    if not a:
        return 0.0
    return max(float(np.max(np.abs(a[k] - b[k]))) if a[k].size else 0.0 for k in a)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _glorot_uniform(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _init_layer(layer: Layer, rng) -> dict[str, np.ndarray]:
    if isinstance(layer, Dense):
        w = _glorot_uniform(rng, (layer.in_dim, layer.out_dim), layer.in_dim, layer.out_dim)
        return {"weight": w, "bias": np.zeros(layer.out_dim)}
    if isinstance(layer, Conv2D):
        k = layer.kernel
        fan_in = layer.in_ch * k * k
        fan_out = layer.out_ch * k * k
        w = _glorot_uniform(rng, (layer.out_ch, layer.in_ch, k, k), fan_in, fan_out)
        return {"weight": w, "bias": np.zeros(layer.out_ch)}
    return {}


def _head_prefix(model: ModelSpec, head_index: int | None) -> str:
    if isinstance(model.head_setting, MultiHead):
        return f"heads.{head_index:02d}"
    return "head"


def iter_param_layers(layers: tuple[Layer, ...]) -> Iterator[tuple[int, Layer]]:
    for i, layer in enumerate(layers):
        if isinstance(layer, (Dense, Conv2D)):
            yield i, layer


def init_params(model: ModelSpec, seed: int) -> Params:
    """Deterministic Glorot-uniform weights, zero biases, per-layer streams."""
    params: Params = {}
    for i, layer in iter_param_layers(model.feature_layers):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, i, layer.seed]))
        for pname, arr in _init_layer(layer, rng).items():
            params[f"features.{i:02d}.{pname}"] = arr
    for h in range(model.num_heads):
        prefix = _head_prefix(model, h)
        for i, layer in iter_param_layers(model.head_layers):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1, h, i, layer.seed]))
            for pname, arr in _init_layer(layer, rng).items():
                params[f"{prefix}.{i:02d}.{pname}"] = arr
    return {k: params[k] for k in sorted(params)}


def split_params(model: ModelSpec, params: Params) -> tuple[Params, Params]:
    """Disjoint partition into (feature params, head params); union is exact."""
    check_aligned(params, init_params(model, 0), "params vs model")
    feats = {k: params[k] for k in sorted(params) if k.startswith("features.")}
    heads = {k: params[k] for k in sorted(params) if not k.startswith("features.")}
    return feats, heads


def replace_head(model: ModelSpec, params: Params, head_index: int, new_seed: int) -> Params:
    """Re-initialize one head from new_seed; feature params are untouched."""
    if not isinstance(model.head_setting, MultiHead):
        raise ConfigurationError("replace_head requires a MultiHead model")
    if not 0 <= head_index < model.num_heads:
        raise ConfigurationError(f"head index {head_index} out of range")
    out = clone_params(params)
    prefix = _head_prefix(model, head_index)
    for i, layer in iter_param_layers(model.head_layers):
        rng = np.random.default_rng(np.random.SeedSequence([new_seed, 1, head_index, i, layer.seed]))
        for pname, arr in _init_layer(layer, rng).items():
            out[f"{prefix}.{i:02d}.{pname}"] = arr
    return out


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _conv_cols(x, k):
    # sliding windows (B, C, k, k, Hp, Wp) as a view
    b, c, h, w = x.shape
    hp, wp = h - k + 1, w - k + 1
    if hp < 1 or wp < 1:
        raise AlignmentError(f"conv kernel {k} larger than input {h}x{w}")
    sb, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, c, k, k, hp, wp), strides=(sb, sc, sh, sw, sh, sw), writeable=False
    )


def _layer_forward(layer, p, x, caches):
    if isinstance(layer, Dense):
        if x.ndim != 2 or x.shape[1] != layer.in_dim:
            raise AlignmentError(f"dense expects (batch, {layer.in_dim}), got {x.shape}")
        caches.append(x)
        return x @ p["weight"] + p["bias"]
    if isinstance(layer, Conv2D):
        if x.ndim != 4 or x.shape[1] != layer.in_ch:
            raise AlignmentError(f"conv expects (batch, {layer.in_ch}, h, w), got {x.shape}")
        k = layer.kernel
        cols = _conv_cols(x, k)
        b, _, _, _, hp, wp = cols.shape
        cols2 = cols.reshape(b, layer.in_ch * k * k, hp * wp)
        wm = p["weight"].reshape(layer.out_ch, layer.in_ch * k * k)
        y = np.einsum("of,bfp->bop", wm, cols2) + p["bias"][:, None]
        caches.append((x.shape, cols2))
        return y.reshape(b, layer.out_ch, hp, wp)
    if isinstance(layer, MaxPool2D):
        k = layer.kernel
        b, c, h, w = x.shape
        if h % k or w % k:
            raise AlignmentError(f"pool kernel {k} does not divide input {h}x{w}")
        xw = x.reshape(b, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
        xw = xw.reshape(b, c, h // k, w // k, k * k)
        idx = xw.argmax(axis=-1)
        caches.append((x.shape, idx))
        return np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
    if isinstance(layer, ReLU):
        caches.append(x)
        return np.maximum(x, 0.0)
    if isinstance(layer, Flatten):
        caches.append(x.shape)
        return x.reshape(x.shape[0], -1)
    raise ConfigurationError(f"unknown layer {layer!r}")


def _layer_backward(layer, p, cache, dy, grads, prefix, i, per_sample):
    if isinstance(layer, Dense):
        x = cache
        if per_sample:
            grads[f"{prefix}.{i:02d}.weight"] = np.einsum("bi,bo->bio", x, dy)
            grads[f"{prefix}.{i:02d}.bias"] = dy.copy()
        else:
            grads[f"{prefix}.{i:02d}.weight"] = x.T @ dy
            grads[f"{prefix}.{i:02d}.bias"] = dy.sum(axis=0)
        return dy @ p["weight"].T
    if isinstance(layer, Conv2D):
        x_shape, cols2 = cache
        k = layer.kernel
        b, _, hp, wp = dy.shape
        dyp = dy.reshape(b, layer.out_ch, hp * wp)
        if per_sample:
            dw = np.einsum("bop,bfp->bof", dyp, cols2)
            grads[f"{prefix}.{i:02d}.weight"] = dw.reshape(b, layer.out_ch, layer.in_ch, k, k)
            grads[f"{prefix}.{i:02d}.bias"] = dyp.sum(axis=2)
        else:
            dw = np.einsum("bop,bfp->of", dyp, cols2)
            grads[f"{prefix}.{i:02d}.weight"] = dw.reshape(layer.out_ch, layer.in_ch, k, k)
            grads[f"{prefix}.{i:02d}.bias"] = dyp.sum(axis=(0, 2))
        wm = p["weight"].reshape(layer.out_ch, layer.in_ch * k * k)
        dcols = np.einsum("of,bop->bfp", wm, dyp)
        dcols = dcols.reshape(b, layer.in_ch, k, k, hp, wp)
        dx = np.zeros(x_shape)
        for a in range(k):
            for c in range(k):
                dx[:, :, a:a + hp, c:c + wp] += dcols[:, :, a, c]
        return dx
    if isinstance(layer, MaxPool2D):
        x_shape, idx = cache
        k = layer.kernel
        b, c, h, w = x_shape
        dxw = np.zeros((b, c, h // k, w // k, k * k))
        np.put_along_axis(dxw, idx[..., None], dy[..., None], axis=-1)
        dxw = dxw.reshape(b, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return dxw.reshape(b, c, h, w)
    if isinstance(layer, ReLU):
        return dy * (cache > 0)
    if isinstance(layer, Flatten):
        return dy.reshape(cache)
    raise ConfigurationError(f"unknown layer {layer!r}")


@dataclass
class ForwardCache:
    head_index: int | None
    feature_caches: list
    head_caches: list
    features: np.ndarray
    batch_size: int


def _resolve_head(model: ModelSpec, head_index: int | None) -> int:
    if isinstance(model.head_setting, MultiHead):
        if head_index is None:
            raise ConfigurationError("head_index required for a MultiHead model")
        if not 0 <= head_index < model.num_heads:
            raise ConfigurationError(f"head index {head_index} out of range")
        return head_index
    if head_index not in (None, 0):
        raise ConfigurationError("head_index not applicable to a SingleHead model")
    return 0


def _layer_params(params, prefix, i):
    return {
        "weight": params.get(f"{prefix}.{i:02d}.weight"),
        "bias": params.get(f"{prefix}.{i:02d}.bias"),
    }


def forward_cached(
    model: ModelSpec, params: Params, batch: np.ndarray, head_index: int | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass keeping the per-layer state needed for a backward pass."""
    h = _resolve_head(model, head_index)
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("empty batch")
    feature_caches: list = []
    for i, layer in enumerate(model.feature_layers):
        x = _layer_forward(layer, _layer_params(params, "features", i), x, feature_caches)
    features = x
    prefix = _head_prefix(model, h)
    head_caches: list = []
    for i, layer in enumerate(model.head_layers):
        x = _layer_forward(layer, _layer_params(params, prefix, i), x, head_caches)
    return x, ForwardCache(h, feature_caches, head_caches, features, batch.shape[0])


def forward(
    model: ModelSpec, params: Params, batch: np.ndarray, head_index: int | None = None
) -> np.ndarray:
    """Logits for a batch; deterministic for fixed inputs."""
    return forward_cached(model, params, batch, head_index)[0]


def backward_from_logits(
    model: ModelSpec,
    params: Params,
    cache: ForwardCache,
    dlogits: np.ndarray,
    dfeatures_extra: np.ndarray | None = None,
    per_sample: bool = False,
) -> Params:
    """Parameter gradients for a loss given its gradient at the logits.

    dfeatures_extra, when given, is added to the gradient flowing into the
    feature extractor (a loss term attached directly to the features).
    With per_sample=True every gradient carries a leading batch axis and
    no summation over the batch is performed.
    """
    grads: Params = {}
    prefix = _head_prefix(model, cache.head_index)
    dy = dlogits
    for i in range(len(model.head_layers) - 1, -1, -1):
        layer = model.head_layers[i]
        dy = _layer_backward(layer, _layer_params(params, prefix, i),
                             cache.head_caches[i], dy, grads, prefix, i, per_sample)
    if dfeatures_extra is not None:
        dy = dy + dfeatures_extra
    for i in range(len(model.feature_layers) - 1, -1, -1):
        layer = model.feature_layers[i]
        dy = _layer_backward(layer, _layer_params(params, "features", i),
                             cache.feature_caches[i], dy, grads, "features", i, per_sample)
    # inactive heads receive exactly zero gradient
    for name in params:
        if name not in grads:
            shape = params[name].shape
            grads[name] = np.zeros((cache.batch_size,) + shape if per_sample else shape)
    return {k: grads[k] for k in sorted(grads)}


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its logits gradient."""
    if logits.shape[0] == 0:
        raise DataError("empty batch")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DataError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    n_classes = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(f"label out of range [0, {n_classes})")
    b = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = float(-logp[np.arange(b), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def dice_loss_with_grad(
    logits: np.ndarray, masks: np.ndarray, smoothing: float = 1.0
) -> tuple[float, np.ndarray]:
    """Soft Dice loss (1 - Dice) on sigmoid scores, averaged over samples."""
    if smoothing <= 0:
        raise ConfigurationError("dice smoothing must be > 0")
    if logits.shape[0] == 0:
        raise DataError("empty batch")
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape != logits.shape:
        raise DataError(f"mask shape {masks.shape} does not match logits {logits.shape}")
    b = logits.shape[0]
    p = 1.0 / (1.0 + np.exp(-logits))
    pf = p.reshape(b, -1)
    yf = masks.reshape(b, -1)
    num = 2.0 * (pf * yf).sum(axis=1) + smoothing
    den = pf.sum(axis=1) + yf.sum(axis=1) + smoothing
    loss = float((1.0 - num / den).mean())
    # d(1 - num/den)/dp = -(2*y*den - num) / den^2
    dpf = -(2.0 * yf * den[:, None] - num[:, None]) / den[:, None] ** 2 / b
    dlogits = (dpf * pf * (1.0 - pf)).reshape(logits.shape)
    return loss, dlogits


def task_loss_with_grad(
    logits: np.ndarray, labels: np.ndarray, loss: LossKind
) -> tuple[float, np.ndarray]:
    if isinstance(loss, CrossEntropy):
        return cross_entropy_with_grad(logits, labels)
    if isinstance(loss, Dice):
        return dice_loss_with_grad(logits, labels, loss.smoothing)
    raise ConfigurationError(f"unknown loss {loss!r}")


def loss_and_grad(
    model: ModelSpec,
    params: Params,
    batch: np.ndarray,
    labels: np.ndarray,
    loss: LossKind = CrossEntropy(),
    head_index: int | None = None,
) -> tuple[float, Params]:
    """Task loss and its gradient, aligned with params."""
    logits, cache = forward_cached(model, params, batch, head_index)
    value, dlogits = task_loss_with_grad(logits, labels, loss)
    return value, backward_from_logits(model, params, cache, dlogits)


def per_sample_gradients(
    model: ModelSpec,
    params: Params,
    batch: np.ndarray,
    dlogits: np.ndarray,
    head_index: int | None = None,
) -> Params:
    """Gradients with a leading batch axis: one gradient row per sample."""
    _, cache = forward_cached(model, params, batch, head_index)
    return backward_from_logits(model, params, cache, dlogits, per_sample=True)
