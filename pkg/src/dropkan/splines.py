"""B-spline bases on uniform grids and the edge activation ``w_b*silu(x) + w_s*spline(x)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EdgeGrid:
    """Uniform knot vector shared by all edges of a layer.

    ``intervals`` uniform cells cover ``[range_lo, range_hi]``; ``degree`` extra
    knots continue the same spacing on each side, so the basis has
    ``intervals + degree`` members and sums to one across the whole range.
    """

    degree: int = 3
    intervals: int = 5
    range_lo: float = -1.0
    range_hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree!r}")
        if int(self.intervals) != self.intervals or self.intervals < 1:
            raise ValueError(f"intervals must be a positive integer, got {self.intervals!r}")
        if not (np.isfinite(self.range_lo) and np.isfinite(self.range_hi)):
            raise ValueError("grid range must be finite")
        if not self.range_lo < self.range_hi:
            raise ValueError(f"need range_lo < range_hi, got [{self.range_lo}, {self.range_hi}]")
        k, g = int(self.degree), int(self.intervals)
        h = (self.range_hi - self.range_lo) / g
        knots = self.range_lo + h * np.arange(-k, g + k + 1, dtype=np.float64)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return int(self.intervals + self.degree)

    def to_dict(self) -> dict:
        return {
            "degree": int(self.degree),
            "intervals": int(self.intervals),
            "range_lo": float(self.range_lo),
            "range_hi": float(self.range_hi),
        }


@dataclass
class EdgeActivation:
    """Parameters of one edge function ``w_b*silu(x) + w_s*sum_k coeffs[k]*B_k(x)``."""

    w_b: float
    w_s: float
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 1:
            raise ValueError("coeffs must be one-dimensional")
        if not (np.isfinite(self.w_b) and np.isfinite(self.w_s) and np.isfinite(self.coeffs).all()):
            raise ValueError("edge parameters must be finite")

    def check_grid(self, grid: EdgeGrid) -> None:
        if self.coeffs.shape[0] != grid.n_basis:
            raise ValueError(
                f"edge has {self.coeffs.shape[0]} coefficients, grid has {grid.n_basis} basis functions"
            )


def _degree_zero(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    # half-open cells [t_j, t_{j+1}); anything outside [t_0, t_last) gets no cell
    return ((x[..., None] >= knots[:-1]) & (x[..., None] < knots[1:])).astype(np.float64)


def _raise_degree(knots: np.ndarray, x: np.ndarray, basis: np.ndarray, d: int) -> np.ndarray:
    """One Cox-de Boor step: degree ``d-1`` values -> degree ``d`` values."""
    n = basis.shape[-1] - 1
    xe = x[..., None]
    left_den = knots[d : d + n] - knots[:n]
    right_den = knots[d + 1 : d + 1 + n] - knots[1 : 1 + n]
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(left_den > 0, (xe - knots[:n]) / left_den, 0.0)
        right = np.where(right_den > 0, (knots[d + 1 : d + 1 + n] - xe) / right_den, 0.0)
    return left * basis[..., :-1] + right * basis[..., 1:]


def _basis_upto(grid: EdgeGrid, x: np.ndarray, degree: int) -> np.ndarray:
    knots = grid.knots
    basis = _degree_zero(knots, x)
    for d in range(1, degree + 1):
        basis = _raise_degree(knots, x, basis, d)
    return basis


def basis_eval(grid: EdgeGrid, x) -> np.ndarray:
    """All ``G + k`` basis values at ``x``; output shape is ``x.shape + (G + k,)``."""
    x = np.asarray(x, dtype=np.float64)
    return _basis_upto(grid, x, int(grid.degree))


def basis_deriv(grid: EdgeGrid, x) -> np.ndarray:
    """Derivatives of the basis functions at ``x`` (same shape as :func:`basis_eval`)."""
    x = np.asarray(x, dtype=np.float64)
    k = int(grid.degree)
    if k == 0:
        return np.zeros(x.shape + (grid.n_basis,))
    knots = grid.knots
    lower = _basis_upto(grid, x, k - 1)
    n = grid.n_basis
    left_den = knots[k : k + n] - knots[:n]
    right_den = knots[k + 1 : k + 1 + n] - knots[1 : 1 + n]
    with np.errstate(divide="ignore"):
        left = np.where(left_den > 0, k / left_den, 0.0)
        right = np.where(right_den > 0, k / right_den, 0.0)
    return left * lower[..., :-1] - right * lower[..., 1:]


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    # x * sigmoid(x), evaluated without overflowing exp for large |x|
    return x * sigmoid(x)


def silu_deriv(x):
    x = np.asarray(x, dtype=np.float64)
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def spline_eval(coeffs: np.ndarray, grid: EdgeGrid, x) -> np.ndarray:
    return basis_eval(grid, x) @ np.asarray(coeffs, dtype=np.float64)


def activation_eval(edge: EdgeActivation, grid: EdgeGrid, x):
    """Evaluate one edge function at ``x`` (scalar or array)."""
    edge.check_grid(grid)
    result = edge.w_b * silu(x) + edge.w_s * spline_eval(edge.coeffs, grid, x)
    return float(result) if np.ndim(result) == 0 else result


def init_edge(grid: EdgeGrid, rng: np.random.Generator, sigma: float = 0.1,
              w_b: float = 1.0, w_s: float = 1.0) -> EdgeActivation:
    return EdgeActivation(w_b=w_b, w_s=w_s, coeffs=rng.normal(0.0, sigma, size=grid.n_basis))
