"""Hand-derived reverse pass through KAN layers, plus the training losses."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .layers import DropMode, KanNetwork, LayerCache
from .splines import basis_deriv, sigmoid, silu_deriv


class LossKind(str, enum.Enum):
    SOFTMAX_CE = "softmax_cross_entropy"
    BINARY_LOGISTIC = "binary_logistic"
    MSE = "mse"


@dataclass
class LayerGrad:
    d_wb: np.ndarray
    d_ws: np.ndarray
    d_coeffs: np.ndarray

    def arrays(self) -> list:
        return [self.d_wb, self.d_ws, self.d_coeffs]


@dataclass
class GradientSet:
    layers: list
    d_input: np.ndarray

    def arrays(self) -> list:
        """Flat list aligned with :meth:`KanNetwork.params`."""
        return [a for g in self.layers for a in g.arrays()]

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays()) and bool(np.isfinite(self.d_input).all())


def layer_backward(layer, cache: LayerCache, grad_out: np.ndarray):
    """Gradients of one layer given ``dL/d(output)`` of shape ``(batch, n_out)``."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    mode, mask, factor = cache.mode, cache.mask, cache.factor

    if mode is DropMode.DROPOUT:
        grad_sum = grad_out * mask * factor
    else:
        grad_sum = grad_out
    g = np.broadcast_to(grad_sum[:, :, None], cache.post.shape)
    # upstream gradient reaching the base term and the spline term of each edge
    if mode is DropMode.DROPKAN_PA:
        g_base = g * mask * factor
        g_spline = g_base
    elif mode is DropMode.DROPKAN_PS:
        g_base = g
        g_spline = g * mask * factor
    else:
        g_base = g_spline = g

    d_wb = np.einsum("bji,bi->ji", g_base, cache.base)
    d_ws = (g_spline * cache.spline).sum(axis=0)
    gw = g_spline * layer.w_s
    d_coeffs = np.einsum("bji,bik->jik", gw, cache.basis)

    dbasis = basis_deriv(layer.grid, cache.x)
    dspline = np.einsum("bik,jik->bji", dbasis, layer.coeffs)
    d_x = (np.einsum("bji,ji->bi", g_base, layer.w_b) * silu_deriv(cache.x)
           + (gw * dspline).sum(axis=1))
    return LayerGrad(d_wb, d_ws, d_coeffs), d_x


def backward(net: KanNetwork, caches, output_grad) -> GradientSet:
    """Exact partials of the loss for every parameter, honouring the cached masks."""
    if len(caches) != len(net.layers):
        raise ValueError(f"cache holds {len(caches)} layers, network has {len(net.layers)}")
    for layer, cache in zip(net.layers, caches):
        if cache.x.shape[1] != layer.n_in or cache.post.shape[1:] != (layer.n_out, layer.n_in):
            raise ValueError("cache does not match network shapes")
    grad = np.asarray(output_grad, dtype=np.float64)
    grads = [None] * len(net.layers)
    for index in range(len(net.layers) - 1, -1, -1):
        grads[index], grad = layer_backward(net.layers[index], caches[index], grad)
    return GradientSet(grads, grad)


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be a 1-d integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def loss_eval(logits, labels, kind=LossKind.SOFTMAX_CE, n_classes: int | None = None):
    """Mean loss over the batch and its gradient with respect to ``logits``.

    ``mse`` regresses a single output onto the integer label; ``n_classes``
    bounds the label range there (defaults to unbounded above).
    """
    kind = LossKind(kind)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be (batch, n_outputs)")
    batch = logits.shape[0]
    if kind is LossKind.SOFTMAX_CE:
        labels = _check_labels(labels, logits.shape[1])
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        loss = -log_probs[np.arange(batch), labels].mean()
        grad = np.exp(log_probs)
        grad[np.arange(batch), labels] -= 1.0
        return float(loss), grad / batch
    if logits.shape[1] != 1:
        raise ValueError(f"{kind.value} needs a single output column")
    z = logits[:, 0]
    if kind is LossKind.BINARY_LOGISTIC:
        labels = _check_labels(labels, 2).astype(np.float64)
        # log(1 + e^z) - y z, stable for either sign of z
        loss = (np.logaddexp(0.0, z) - labels * z).mean()
        return float(loss), ((sigmoid(z) - labels) / batch)[:, None]
    labels = _check_labels(labels, n_classes if n_classes is not None else np.iinfo(np.int64).max)
    diff = z - labels
    return float(np.mean(diff ** 2)), (2.0 * diff / batch)[:, None]


def predict_labels(logits, kind=LossKind.SOFTMAX_CE, n_classes: int | None = None) -> np.ndarray:
    kind = LossKind(kind)
    logits = np.asarray(logits, dtype=np.float64)
    if kind is LossKind.SOFTMAX_CE:
        return np.argmax(logits, axis=1)  # first maximum wins ties
    if kind is LossKind.BINARY_LOGISTIC:
        return (logits[:, 0] > 0).astype(np.int64)
    hi = (n_classes - 1) if n_classes else np.inf
    return np.clip(np.rint(logits[:, 0]), 0, hi).astype(np.int64)


def default_loss(n_outputs: int, n_classes: int) -> LossKind:
    if n_outputs == n_classes:
        return LossKind.SOFTMAX_CE
    if n_outputs == 1 and n_classes == 2:
        return LossKind.BINARY_LOGISTIC
    if n_outputs == 1:
        return LossKind.MSE
    raise ValueError(f"{n_outputs} outputs cannot encode {n_classes} classes")
