"""Brute-force oracle suite: mask enumeration, finite differences, dropout witnesses."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import LossKind, backward, loss_eval
from .layers import (
    DropConfig, DropMode, KanLayer, KanNetwork, build_network, drop_configs, init_layer, layer_forward,
    network_forward,
)
from .splines import EdgeActivation, EdgeGrid, activation_eval, basis_eval, silu

GRAD_REL_TOL = 1e-4
GRAD_STEP = 1e-5
# finite differences cannot resolve partials below ~1e-9 on O(1) losses; relative
# error is measured against max(|analytic|, |numeric|, GRAD_FLOOR)
GRAD_FLOOR = 1e-4


@dataclass
class Check:
    name: str
    tolerance: str
    measured: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} measured={self.measured:.3e}  tol={self.tolerance}"


def all_masks(n: int) -> np.ndarray:
    """Every binary vector of length ``n``, shape ``(2**n, n)``, in counting order."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def mask_weights(masks: np.ndarray, p: float) -> np.ndarray:
    kept = masks.sum(axis=1)
    return (1.0 - p) ** kept * p ** (masks.shape[1] - kept)


def pa_expectation_error(n_in: int, p: float, rng: np.random.Generator,
                         forward: Callable = layer_forward, n_out: int = 2) -> float:
    """Largest unit-relative gap between the mask-averaged scaled node sum and the plain sum.

    Node ``j`` only sees mask row ``j``, so driving every row with the same
    pattern enumerates each node's full ``2**n_in`` distribution at once.
    """
    grid = EdgeGrid()
    layer = init_layer(n_in, n_out, grid, rng, sigma=0.5,
                       drop=DropConfig(DropMode.DROPKAN_PA, p, scale=True))
    layer.w_b[...] = rng.normal(1.0, 0.3, size=layer.w_b.shape)
    layer.w_s[...] = rng.normal(1.0, 0.3, size=layer.w_s.shape)
    x = rng.uniform(-1.0, 1.0, size=(1, n_in))
    plain = forward(layer, x, False)[0]
    patterns = all_masks(n_in)
    masks = np.repeat(patterns[:, None, :], n_out, axis=1)
    outs = forward(layer, np.repeat(x, len(patterns), axis=0), True, None, masks)
    expected = mask_weights(patterns, p) @ outs
    return float(np.max(np.abs(expected - plain) / np.maximum(1.0, np.abs(plain))))


def ps_expectation_error(p: float, scale: bool, rng: np.random.Generator,
                         forward: Callable = layer_forward) -> float:
    """Two-point enumeration of the post-spline mask on one edge, against the closed form."""
    grid = EdgeGrid()
    edge = EdgeActivation(rng.normal(1.0, 0.5), rng.normal(1.0, 0.5), rng.normal(0.0, 0.5, grid.n_basis))
    layer = KanLayer(grid, [[edge.w_b]], [[edge.w_s]], edge.coeffs[None, None, :],
                     DropConfig(DropMode.DROPKAN_PS, p, scale))
    xs = rng.uniform(-1.0, 1.0, size=(16, 1))
    on = forward(layer, xs, True, None, np.ones((16, 1, 1)))[:, 0]
    off = forward(layer, xs, True, None, np.zeros((16, 1, 1)))[:, 0]
    enumerated = (1.0 - p) * on + p * off
    base = edge.w_b * silu(xs[:, 0])
    spline = edge.w_s * (basis_eval(grid, xs[:, 0]) @ edge.coeffs)
    targets = [base + spline] if scale else [base + (1.0 - p) * spline]
    if scale:
        # scaled: the expectation is the unmasked activation itself
        targets.append(np.array([activation_eval(edge, grid, float(v)) for v in xs[:, 0]]))
    return max(float(np.max(np.abs(enumerated - t) / np.maximum(1.0, np.abs(t)))) for t in targets)


def gradient_error(mode, seed: int, arch=(4, 3, 2), p: float = 0.4, scale: bool = True) -> float:
    """Worst floored relative error between backprop and central differences, masks frozen."""
    rng = np.random.default_rng(seed)
    mode = DropMode(mode)
    n_layers = len(arch) - 1
    drops = drop_configs(mode, scale, p, n_layers) if mode is not DropMode.NONE else None
    net = build_network(list(arch), rng, sigma=0.5, drops=drops)
    for layer in net.layers:
        layer.w_b[...] = rng.normal(1.0, 0.3, size=layer.w_b.shape)
        layer.w_s[...] = rng.normal(1.0, 0.3, size=layer.w_s.shape)
    x = rng.uniform(-1.2, 1.2, size=(6, arch[0]))
    labels = rng.integers(0, arch[-1], size=6)
    out, caches = network_forward(net, x, training=True, rng=rng)
    masks = [c.mask for c in caches]
    _, grad = loss_eval(out, labels, LossKind.SOFTMAX_CE)
    grads = backward(net, caches, grad)

    def loss_at(inputs=x):
        o, _ = network_forward(net, inputs, training=True, masks=masks, keep_cache=False)
        return loss_eval(o, labels, LossKind.SOFTMAX_CE)[0]

    worst = 0.0
    pairs = list(zip(net.params(), grads.arrays())) + [(x, grads.d_input)]
    for param, analytic in pairs:
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + GRAD_STEP
            up = loss_at()
            param[idx] = old - GRAD_STEP
            down = loss_at()
            param[idx] = old
            numeric = (up - down) / (2 * GRAD_STEP)
            a = analytic[idx]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), GRAD_FLOOR))
    return worst


def witness_net(seed: int, sigma: float = 0.5) -> KanNetwork:
    """Seeded 2-layer [3, 3, 2] net with visibly nonzero splines."""
    return build_network([3, 3, 2], np.random.default_rng(seed), sigma=sigma)


def dropout_excision_gap(seed: int, node: int = 0) -> float:
    """How far a dropped-out node is from being deleted: max |zeroed - deleted| downstream."""
    net = witness_net(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1.0, 1.0, size=(8, 3))
    first, second = net.layers
    hidden = layer_forward(first, x)
    zeroed = hidden.copy()
    zeroed[:, node] = 0.0
    with_zero = layer_forward(second, zeroed)
    keep = [i for i in range(second.n_in) if i != node]
    pruned = KanLayer(second.grid, second.w_b[:, keep], second.w_s[:, keep], second.coeffs[:, keep])
    deleted = layer_forward(pruned, hidden[:, keep])
    return float(np.max(np.abs(with_zero - deleted)))


def homogeneity_gap(seed: int, x: float = 0.5, s: float = 2.0) -> float:
    """Largest |phi(s x) - s phi(x)| over the edges of the witness net's second layer."""
    layer = witness_net(seed).layers[1]
    gaps = []
    for j, i in np.ndindex(layer.w_b.shape):
        edge = layer.edge(j, i)
        gaps.append(abs(activation_eval(edge, layer.grid, s * x) - s * activation_eval(edge, layer.grid, x)))
    return max(gaps)


def dropout_scaling_gap(seed: int, p: float = 0.5) -> float:
    """|E_masks[dropout-scaled output] - no-drop output|, enumerated over all hidden masks."""
    net = witness_net(seed)
    drops = drop_configs(DropMode.DROPOUT, True, p, 2)
    dropped = net.with_drops(drops)
    x = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=(1, 3))
    plain, _ = network_forward(net, x)
    patterns = all_masks(net.layers[0].n_out)
    xs = np.repeat(x, len(patterns), axis=0)
    outs, _ = network_forward(dropped, xs, training=True, masks=[patterns, None], keep_cache=False)
    expected = mask_weights(patterns, p) @ outs
    return float(np.max(np.abs(expected - plain[0])))


def gradient_witnesses(seed: int):
    """Gradients when hidden node 0 is dropped (dropout) or edge (0, 0) is masked (DropKAN pa).

    Returns ``(dropout_incoming_max, dropout_outgoing_max, pa_masked_max)``: the
    largest gradient magnitude on the dropped node's incoming edges, on its
    outgoing edges, and on the masked edges.
    """
    net = witness_net(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1.0, 1.0, size=(8, 3))
    labels = rng.integers(0, 2, size=8)

    dropped = net.with_drops(drop_configs(DropMode.DROPOUT, True, 0.5, 2))
    hidden_mask = np.ones((8, 3))
    hidden_mask[:, 0] = 0.0
    out, caches = network_forward(dropped, x, training=True, masks=[hidden_mask, None])
    grads = backward(dropped, caches, loss_eval(out, labels)[1])
    first, second = grads.layers
    incoming = max(np.abs(first.d_coeffs[0]).max(), np.abs(first.d_wb[0]).max(), np.abs(first.d_ws[0]).max())
    outgoing = max(np.abs(second.d_coeffs[:, 0]).max(), np.abs(second.d_ws[:, 0]).max())

    masked = net.with_drops(drop_configs(DropMode.DROPKAN_PA, True, 0.5, 2))
    edge_masks = [np.ones((8, 3, 3)), np.ones((8, 2, 3))]
    edge_masks[0][:, 0, 0] = 0.0
    edge_masks[1][:, 1, 2] = 0.0
    out, caches = network_forward(masked, x, training=True, masks=edge_masks)
    grads = backward(masked, caches, loss_eval(out, labels)[1])
    a, b = grads.layers
    pa = max(abs(a.d_wb[0, 0]), abs(a.d_ws[0, 0]), np.abs(a.d_coeffs[0, 0]).max(),
             abs(b.d_wb[1, 2]), abs(b.d_ws[1, 2]), np.abs(b.d_coeffs[1, 2]).max())
    return float(incoming), float(outgoing), float(pa)


def run_checks(seed: int = 0, forward: Callable = layer_forward, gradient_seeds: int = 20) -> list:
    rng = np.random.default_rng(seed)
    checks = []
    for p in (0.5, 0.25):
        err = max(pa_expectation_error(n, p, rng, forward) for n in range(3, 13))
        checks.append(Check(f"pa expectation, n_in 3..12, p={p}", "1e-10 abs per unit", err, err <= 1e-10))
    for scale in (False, True):
        err = max(ps_expectation_error(p, scale, rng, forward) for p in (0.1, 0.3, 0.5, 0.7))
        name = f"ps expectation ({'scaled' if scale else 'unscaled'})"
        checks.append(Check(name, "1e-12", err, err <= 1e-12))
    for mode in DropMode:
        worst = max(gradient_error(mode, seed * 1000 + s) for s in range(gradient_seeds))
        checks.append(Check(f"gradients vs central differences [{mode.value}]",
                            f"{GRAD_REL_TOL:g} rel (h={GRAD_STEP:g})", worst, worst <= GRAD_REL_TOL))
    gap = dropout_excision_gap(seed)
    checks.append(Check("zeroed node still feeds phi(0) downstream", "> 1e-8", gap, gap > 1e-8))
    gap = homogeneity_gap(seed)
    checks.append(Check("|phi(2x) - 2 phi(x)| at x=0.5", "> 1e-3", gap, gap > 1e-3))
    gap = dropout_scaling_gap(seed)
    checks.append(Check("dropout-scaled expectation off no-drop output", "> 1e-3", gap, gap > 1e-3))
    incoming, outgoing, pa = gradient_witnesses(seed)
    checks.append(Check("dropout: incoming grads of dropped node", "== 0", incoming, incoming == 0.0))
    checks.append(Check("dropout: outgoing grads of dropped node", "> 0", outgoing, outgoing > 0.0))
    checks.append(Check("dropkan_pa: grads of masked edges", "== 0", pa, pa == 0.0))
    return checks


def report(checks) -> str:
    lines = [c.line() for c in checks]
    failed = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"
