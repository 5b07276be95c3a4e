"""Uniform grids and CDF-difference quadrature operators.

All integral operators in this package share the kernel

    K_i(x, r) = d/dx F_i(x / b(r)),

where ``b`` is the drift map of the chart (``1 + r`` for Shiryaev-Roberts,
``max(1, r)`` for CUSUM, ``r**alpha`` for EWMA).  Two discretizations are
needed:

* the forward operator ``M_i`` integrates over ``x`` and returns values at
  the nodes ``r_m``;
* the conjugate operator ``N_inf`` integrates over ``r`` and returns values at
  the nodes ``x_m`` (used from the left, for the quasi-stationary density).

Both are stored as ``(N+1, N+1)`` arrays whose rows are indexed by the
``r`` node and whose columns are indexed by the ``x`` node, so the forward
operator acts as ``A @ u`` and the conjugate operator as ``u @ C``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .models import LikelihoodRatioModel, Measure, lr_cdf

#: largest ``N`` for which operators are materialized as dense arrays
DENSE_LIMIT = 12_000
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class Grid:
    """Uniform sampling ``x_j = lo + j * step`` of ``[lo, hi]``."""

    lo: float
    hi: float
    n_intervals: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lo, hi, n = float(self.lo), float(self.hi), int(self.n_intervals)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("grid bounds must be finite")
        if lo < 0 or hi <= lo:
            raise ValueError(f"need hi > lo >= 0, got lo={lo}, hi={hi}")
        if n < 2:
            raise ValueError(f"need at least 2 intervals, got {n}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n_intervals", n)
        nodes = lo + (hi - lo) * (np.arange(n + 1) / n)
        nodes[-1] = hi
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.n_intervals

    @property
    def size(self) -> int:
        return self.n_intervals + 1

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self)

    def locate(self, r: float) -> tuple[int, float]:
        """Cell index ``j`` and fraction ``s`` with ``r = (1-s) x_j + s x_{j+1}``."""
        if not (self.lo <= r <= self.hi):
            raise ValueError(f"r={r} outside [{self.lo}, {self.hi}]")
        pos = (r - self.lo) / self.step
        j = min(int(math.floor(pos)), self.n_intervals - 1)
        return j, pos - j

    def interpolate(self, values, r):
        """Piecewise-linear interpolation of sampled ``values`` at ``r``."""
        return np.interp(r, self.nodes, values)

    def nearest_index(self, r: float) -> int:
        return int(np.clip(round((r - self.lo) / self.step), 0, self.n_intervals))


def build_grid(lo: float, hi: float, n_intervals: int) -> Grid:
    return Grid(lo, hi, n_intervals)


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Composite trapezoid weights ``c * [0.5, 1, ..., 1, 0.5]``."""
    w = np.full(grid.size, grid.step)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def trapezoid_pair(weights, u, v) -> float:
    """``sum_j w_j u_j v_j``, the trapezoid rule for ``int u v``."""
    weights = np.asarray(weights, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim == 0:
        u = np.full(weights.shape, float(u))
    if v.ndim == 0:
        v = np.full(weights.shape, float(v))
    if u.shape != weights.shape or v.shape != weights.shape:
        raise ValueError(f"length mismatch: weights {weights.shape}, u {u.shape}, v {v.shape}")
    return float(np.dot(weights, u * v))


class DriftKind(enum.Enum):
    SR = "sr"
    CUSUM = "cusum"
    EWMA = "ewma"


@dataclass(frozen=True)
class DriftMap:
    """Factor ``b(r)`` multiplying the likelihood ratio in one update step."""

    kind: DriftKind
    alpha: float | None = None

    def __post_init__(self):
        kind = DriftKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DriftKind.EWMA:
            if self.alpha is None or not (0.0 < float(self.alpha) < 1.0):
                raise ValueError("EWMA drift needs 0 < alpha < 1")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValueError(f"alpha is only meaningful for EWMA, not {kind.value}")

    @classmethod
    def sr(cls) -> "DriftMap":
        return cls(DriftKind.SR)

    @classmethod
    def cusum(cls) -> "DriftMap":
        return cls(DriftKind.CUSUM)

    @classmethod
    def ewma(cls, alpha: float) -> "DriftMap":
        return cls(DriftKind.EWMA, alpha)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind is DriftKind.SR:
            return 1.0 + r
        if self.kind is DriftKind.CUSUM:
            return np.maximum(1.0, r)
        if np.any(r <= 0):
            raise ValueError("EWMA drift is undefined for r <= 0")
        return r ** self.alpha

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind is DriftKind.SR:
            return np.ones_like(r)
        if self.kind is DriftKind.CUSUM:
            return (r > 1.0).astype(float)
        return self.alpha * r ** (self.alpha - 1.0)

    def check_domain(self, grid: Grid) -> None:
        if self.kind is DriftKind.EWMA and grid.lo <= 0:
            raise ValueError("EWMA grids must start strictly above 0")


class Direction(enum.Enum):
    FORWARD = "forward"
    CONJUGATE = "conjugate"


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Quadrature matrix of the kernel ``d/dx F_i(x / b(r))`` on a grid.

    ``matrix`` is ``None`` for matrix-free operators; rows are then
    recomputed block by block on every application.
    """

    model: LikelihoodRatioModel
    measure: Measure
    grid: Grid
    drift: DriftMap
    direction: Direction
    matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def is_dense(self) -> bool:
        return self.matrix is not None

    def rows(self, start: int, stop: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix[start:stop]
        if self.direction is Direction.FORWARD:
            return _forward_rows(self.model, self.measure, self.grid, self.drift, start, stop)
        return _conjugate_rows(self.model, self.grid, self.drift, start, stop)

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        return self.rows(0, self.size)

    def apply(self, u):
        """Forward application: approximate ``int K(x, r_m) u(x) dx`` at every ``r_m``."""
        if self.direction is not Direction.FORWARD:
            raise TypeError("conjugate operators are applied from the left")
        u = np.asarray(u, dtype=float)
        if self.matrix is not None:
            return self.matrix @ u
        out = np.empty((self.size,) + u.shape[1:])
        for s in range(0, self.size, _BLOCK_ROWS):
            e = min(s + _BLOCK_ROWS, self.size)
            out[s:e] = self.rows(s, e) @ u
        return out

    def apply_left(self, u):
        """Conjugate application: approximate ``int K(x_m, r) u(r) dr`` at every ``x_m``."""
        if self.direction is not Direction.CONJUGATE:
            raise TypeError("forward operators are applied from the right")
        u = np.asarray(u, dtype=float)
        if self.matrix is not None:
            return u @ self.matrix
        out = np.zeros(self.size)
        for s in range(0, self.size, _BLOCK_ROWS):
            e = min(s + _BLOCK_ROWS, self.size)
            out += u[s:e] @ self.rows(s, e)
        return out

    def row_sums(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.sum(axis=1)
        return self.apply(np.ones(self.size)) if self.direction is Direction.FORWARD else np.concatenate(
            [self.rows(s, min(s + _BLOCK_ROWS, self.size)).sum(axis=1) for s in range(0, self.size, _BLOCK_ROWS)]
        )


def _cdf_table(model, measure, grid: Grid, drift: DriftMap, r_idx: slice) -> np.ndarray:
    """``F_i(x_k / b(r_m))`` for ``m`` in ``r_idx`` (rows) and every ``k`` (columns)."""
    b = drift(grid.nodes[r_idx])
    return lr_cdf(model, measure, grid.nodes[None, :] / b[:, None])


def _forward_rows(model, measure, grid: Grid, drift: DriftMap, start: int, stop: int) -> np.ndarray:
    G = _cdf_table(model, measure, grid, drift, slice(start, stop))
    rows = np.empty_like(G)
    rows[:, 1:-1] = G[:, 2:] - G[:, :-2]
    rows[:, 0] = G[:, 1] - G[:, 0]
    rows[:, -1] = G[:, -1] - G[:, -2]
    rows *= 0.5
    np.maximum(rows, 0.0, out=rows)
    return rows


def _conjugate_rows(model, grid: Grid, drift: DriftMap, start: int, stop: int) -> np.ndarray:
    """Rows ``start:stop`` (``r`` nodes) of the conjugate quadrature matrix.

    The conjugate integral ``int u(r) K(x, r) dr`` is discretized by the
    trapezoid rule in ``r``, with the kernel at an interior node ``x_k``
    replaced by the central CDF difference

        K(x_k, r) ~ [F(x_{k+1} / b(r)) - F(x_{k-1} / b(r))] / (2c),

    so that ``N[m, k] = w_m M[m, k] / w_k``: the conjugate matrix is the
    trapezoid-weighted transpose of the forward one and the two
    discretizations are adjoint.  The first column keeps that adjoint form
    (a one-sided cell average), which conserves the mass of kernels far
    narrower than the grid step, as happens near ``r = 0``.  The last column
    uses a second-order one-sided difference so that the value at the
    threshold converges at the same rate as the interior.
    """
    c = grid.step
    w = trapezoid_weights(grid)[start:stop, None]
    G = _cdf_table(model, Measure.PRE, grid, drift, slice(start, stop))
    out = np.empty_like(G)
    out[:, 1:-1] = (G[:, 2:] - G[:, :-2]) * (0.5 / c)
    out[:, 0] = (G[:, 1] - G[:, 0]) * (1.0 / c)
    out[:, -1] = (3.0 * G[:, -1] - 4.0 * G[:, -2] + G[:, -3]) * (0.5 / c)
    out *= w
    np.maximum(out, 0.0, out=out)
    return out


def _materialize(size: int, dense: bool | None) -> bool:
    if dense is None:
        return size - 1 <= DENSE_LIMIT
    return dense


def build_forward_operator(model: LikelihoodRatioModel, measure, grid: Grid, drift: DriftMap,
                           dense: bool | None = None) -> DiscreteOperator:
    """CDF-difference trapezoid matrix ``M_i`` of ``u -> int u(x) dF_i(x / b(r))``.

    Row ``m`` holds the weights of ``u(x_0), ..., u(x_N)`` for output node
    ``r_m``; the row telescopes to ``F_i(hi / b(r_m)) - F_i(lo / b(r_m))``.
    """
    measure = Measure.parse(measure)
    drift.check_domain(grid)
    matrix = None
    if _materialize(grid.size, dense):
        matrix = np.empty((grid.size, grid.size))
        for s in range(0, grid.size, _BLOCK_ROWS * 2):
            e = min(s + _BLOCK_ROWS * 2, grid.size)
            matrix[s:e] = _forward_rows(model, measure, grid, drift, s, e)
    return DiscreteOperator(model, measure, grid, drift, Direction.FORWARD, matrix)


def build_conjugate_operator(model: LikelihoodRatioModel, grid: Grid, drift: DriftMap,
                             dense: bool | None = None) -> DiscreteOperator:
    """Pre-change conjugate matrix ``N_inf`` (rows: ``r`` nodes, columns: ``x`` nodes)."""
    drift.check_domain(grid)
    matrix = None
    if _materialize(grid.size, dense):
        matrix = np.empty((grid.size, grid.size))
        for s in range(0, grid.size, _BLOCK_ROWS):
            e = min(s + _BLOCK_ROWS, grid.size)
            matrix[s:e] = _conjugate_rows(model, grid, drift, s, e)
    return DiscreteOperator(model, Measure.PRE, grid, drift, Direction.CONJUGATE, matrix)
