"""KAN layers and networks with neuron dropout and the two DropKAN masking modes."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .splines import EdgeActivation, EdgeGrid, basis_eval, silu

FORMAT_VERSION = 1


class DropMode(str, enum.Enum):
    NONE = "none"
    DROPOUT = "dropout"
    DROPKAN_PA = "dropkan_pa"
    DROPKAN_PS = "dropkan_ps"


@dataclass(frozen=True)
class DropConfig:
    mode: DropMode = DropMode.NONE
    rate: float = 0.0
    scale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", DropMode(self.mode))
        if not (0.0 <= self.rate < 1.0):
            raise ValueError(f"drop rate must lie in [0, 1), got {self.rate!r}")

    @property
    def active(self) -> bool:
        return self.mode is not DropMode.NONE

    @property
    def factor(self) -> float:
        """Multiplier applied to kept units: ``1/(1-p)`` when scaling, else 1."""
        return 1.0 / (1.0 - self.rate) if self.scale else 1.0

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "rate": self.rate, "scale": self.scale}


NO_DROP = DropConfig()


def mask_shape(mode: DropMode, batch: int, n_out: int, n_in: int) -> tuple:
    mode = DropMode(mode)
    if mode is DropMode.DROPOUT:
        return (batch, n_out)
    if mode in (DropMode.DROPKAN_PA, DropMode.DROPKAN_PS):
        return (batch, n_out, n_in)
    raise ValueError("mode 'none' has no mask")


def sample_mask(mode, p: float, batch: int, n_out: int, n_in: int,
                rng: np.random.Generator) -> np.ndarray:
    """Bernoulli keep-mask with keep probability ``1 - p``.

    Uniforms are drawn in C order over the mask shape (sample, then output
    node, then input node), so a given generator state fixes the mask bit for bit.
    """
    if not (0.0 <= p < 1.0):
        raise ValueError(f"drop rate must lie in [0, 1), got {p!r}")
    shape = mask_shape(mode, batch, n_out, n_in)
    return (rng.random(shape) >= p).astype(np.float64)


@dataclass
class KanLayer:
    """Dense ``n_out x n_in`` block of edge functions on one shared grid.

    Parameters are held as arrays: ``w_b`` and ``w_s`` of shape ``(n_out, n_in)``
    and ``coeffs`` of shape ``(n_out, n_in, n_basis)``.
    """

    grid: EdgeGrid
    w_b: np.ndarray
    w_s: np.ndarray
    coeffs: np.ndarray
    drop: DropConfig = NO_DROP

    def __post_init__(self):
        self.w_b = np.asarray(self.w_b, dtype=np.float64)
        self.w_s = np.asarray(self.w_s, dtype=np.float64)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.w_b.ndim != 2 or self.w_b.shape != self.w_s.shape:
            raise ValueError("w_b and w_s must share a 2-d (n_out, n_in) shape")
        if self.coeffs.shape != self.w_b.shape + (self.grid.n_basis,):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match "
                f"{self.w_b.shape + (self.grid.n_basis,)}"
            )

    @property
    def n_out(self) -> int:
        return self.w_b.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_b.shape[1]

    def edge(self, j: int, i: int) -> EdgeActivation:
        return EdgeActivation(float(self.w_b[j, i]), float(self.w_s[j, i]), self.coeffs[j, i].copy())

    def params(self) -> list:
        return [self.w_b, self.w_s, self.coeffs]

    def with_drop(self, drop: DropConfig) -> "KanLayer":
        """Same parameter arrays (shared, not copied) under a different drop config."""
        return replace(self, drop=drop)


def init_layer(n_in: int, n_out: int, grid: EdgeGrid, rng: np.random.Generator,
               sigma: float = 0.1, drop: DropConfig = NO_DROP) -> KanLayer:
    return KanLayer(
        grid=grid,
        w_b=np.ones((n_out, n_in)),
        w_s=np.ones((n_out, n_in)),
        coeffs=rng.normal(0.0, sigma, size=(n_out, n_in, grid.n_basis)),
        drop=drop,
    )


@dataclass
class LayerCache:
    x: np.ndarray
    base: np.ndarray          # silu(x), (batch, n_in)
    basis: np.ndarray         # (batch, n_in, n_basis)
    spline: np.ndarray        # unweighted spline values, (batch, n_out, n_in)
    post: np.ndarray          # unmasked post-activations, (batch, n_out, n_in)
    mode: DropMode = DropMode.NONE
    mask: Optional[np.ndarray] = None
    factor: float = 1.0


def layer_forward(layer: KanLayer, x, training: bool = False,
                  rng: Optional[np.random.Generator] = None, mask: Optional[np.ndarray] = None,
                  return_cache: bool = False):
    """Forward one layer over a ``(batch, n_in)`` input.

    In eval mode (or with mode ``none``) the drop machinery is skipped entirely.
    In training mode a mask is drawn from ``rng`` unless ``mask`` is given.
    Returns the ``(batch, n_out)`` output, plus a :class:`LayerCache` when
    ``return_cache`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ValueError(f"expected input of shape (batch, {layer.n_in}), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("layer input contains non-finite values")

    base = silu(x)
    basis = basis_eval(layer.grid, x)
    spline = np.einsum("bik,jik->bji", basis, layer.coeffs)
    weighted_spline = layer.w_s * spline
    post = layer.w_b * base[:, None, :] + weighted_spline

    drop = layer.drop
    mode = drop.mode if (training and drop.active) else DropMode.NONE
    factor = 1.0
    if mode is not DropMode.NONE:
        factor = drop.factor
        if mask is None:
            if rng is None:
                raise ValueError("training with a drop mode needs an rng or an explicit mask")
            mask = sample_mask(mode, drop.rate, x.shape[0], layer.n_out, layer.n_in, rng)
        else:
            mask = np.asarray(mask, dtype=np.float64)
            expected = mask_shape(mode, x.shape[0], layer.n_out, layer.n_in)
            if mask.shape != expected:
                raise ValueError(f"mask shape {mask.shape} does not match {expected}")
    else:
        mask = None

    if mode is DropMode.NONE:
        out = post.sum(axis=-1)
    elif mode is DropMode.DROPKAN_PA:
        out = factor * (mask * post).sum(axis=-1)
    elif mode is DropMode.DROPKAN_PS:
        masked = layer.w_b * base[:, None, :] + factor * mask * weighted_spline
        out = masked.sum(axis=-1)
    else:
        out = post.sum(axis=-1) * mask * factor

    if return_cache:
        return out, LayerCache(x=x, base=base, basis=basis, spline=spline, post=post,
                               mode=mode, mask=mask, factor=factor)
    return out


@dataclass
class KanNetwork:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")

    @property
    def architecture(self) -> list:
        if not self.layers:
            return []
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "KanNetwork":
        return KanNetwork([
            KanLayer(layer.grid, layer.w_b.copy(), layer.w_s.copy(), layer.coeffs.copy(), layer.drop)
            for layer in self.layers
        ])

    def with_drops(self, drops: Sequence[DropConfig]) -> "KanNetwork":
        if len(drops) != len(self.layers):
            raise ValueError("need one drop config per layer")
        return KanNetwork([layer.with_drop(d) for layer, d in zip(self.layers, drops)])


def maskable_layers(mode, n_layers: int) -> list:
    """Indices of the layers that carry a mask for ``mode``.

    DropKAN masks live inside every layer; neuron dropout sits between layers,
    so it never touches the output layer.
    """
    mode = DropMode(mode)
    if mode is DropMode.NONE:
        return []
    if mode is DropMode.DROPOUT:
        return list(range(n_layers - 1))
    return list(range(n_layers))


def drop_configs(mode, scale: bool, rates, n_layers: int) -> list:
    """Per-layer drop configs; ``rates`` is a scalar or one rate per maskable layer."""
    idx = maskable_layers(mode, n_layers)
    if np.ndim(rates) == 0:
        rates = [float(rates)] * len(idx)
    rates = list(rates)
    if len(rates) != len(idx):
        raise ValueError(f"mode {DropMode(mode).value} on {n_layers} layers needs {len(idx)} rates, got {len(rates)}")
    configs = [NO_DROP] * n_layers
    for layer_index, rate in zip(idx, rates):
        configs[layer_index] = DropConfig(mode, float(rate), bool(scale))
    return configs


def build_network(architecture: Sequence[int], rng: np.random.Generator,
                  grid: Optional[EdgeGrid] = None, sigma: float = 0.1,
                  drops: Optional[Sequence[DropConfig]] = None) -> KanNetwork:
    architecture = [int(n) for n in architecture]
    if len(architecture) < 2 or min(architecture) < 1:
        raise ValueError(f"architecture needs at least two positive widths, got {architecture}")
    grid = grid or EdgeGrid()
    n_layers = len(architecture) - 1
    drops = list(drops) if drops is not None else [NO_DROP] * n_layers
    if len(drops) != n_layers:
        raise ValueError("need one drop config per layer")
    layers = [init_layer(a, b, grid, rng, sigma, d)
              for a, b, d in zip(architecture[:-1], architecture[1:], drops)]
    return KanNetwork(layers)


def network_forward(net: KanNetwork, x, training: bool = False,
                    rng: Optional[np.random.Generator] = None,
                    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
                    keep_cache: Optional[bool] = None):
    """Chain :func:`layer_forward` over the network.

    ``masks`` freezes the per-layer masks (``None`` entries are sampled).
    The cache is kept by default in training mode and dropped in eval mode.
    Returns ``(output, caches)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.architecture[0]:
        raise ValueError(f"expected input of shape (batch, {net.architecture[0]}), got {x.shape}")
    if keep_cache is None:
        keep_cache = training
    if masks is not None and len(masks) != len(net.layers):
        raise ValueError("need one mask entry per layer")
    caches = []
    h = x
    for index, layer in enumerate(net.layers):
        mask = masks[index] if masks is not None else None
        if keep_cache:
            h, cache = layer_forward(layer, h, training, rng, mask, return_cache=True)
            caches.append(cache)
        else:
            h = layer_forward(layer, h, training, rng, mask)
    return h, caches


def predict(net: KanNetwork, x) -> np.ndarray:
    return network_forward(net, x, training=False)[0]


# -- serialization ---------------------------------------------------------

def _hex(a: np.ndarray):
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _unhex(values, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


def network_to_dict(net: KanNetwork) -> dict:
    """Versioned document; floats are stored as hex strings so the round trip is exact."""
    layers = []
    for layer in net.layers:
        layers.append({
            "n_in": layer.n_in,
            "n_out": layer.n_out,
            "grid": layer.grid.to_dict(),
            "drop": {"mode": layer.drop.mode.value, "rate": float(layer.drop.rate).hex(),
                     "scale": layer.drop.scale},
            "w_b": _hex(layer.w_b),
            "w_s": _hex(layer.w_s),
            "coeffs": _hex(layer.coeffs),
        })
    return {"format": "kan-network", "version": FORMAT_VERSION,
            "architecture": net.architecture, "layers": layers}


def network_from_dict(doc: dict) -> KanNetwork:
    if doc.get("format") != "kan-network":
        raise ValueError("not a kan-network document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported kan-network version {doc.get('version')!r}")
    layers = []
    for entry in doc["layers"]:
        g = entry["grid"]
        grid = EdgeGrid(int(g["degree"]), int(g["intervals"]), float(g["range_lo"]), float(g["range_hi"]))
        n_out, n_in = int(entry["n_out"]), int(entry["n_in"])
        d = entry["drop"]
        drop = DropConfig(DropMode(d["mode"]), float.fromhex(d["rate"]), bool(d["scale"]))
        layers.append(KanLayer(
            grid=grid,
            w_b=_unhex(entry["w_b"], (n_out, n_in)),
            w_s=_unhex(entry["w_s"], (n_out, n_in)),
            coeffs=_unhex(entry["coeffs"], (n_out, n_in, grid.n_basis)),
            drop=drop,
        ))
    net = KanNetwork(layers)
    if net.architecture != list(doc["architecture"]):
        raise ValueError("architecture field disagrees with layer shapes")
    return net


def save_network(net: KanNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path) -> KanNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
