"""Operating characteristics of head-start charts from the discretized equations.

Given a grid on the continuation region and the forward operators ``M_inf``
and ``M_0`` this module produces

* ``phi_inf`` and ``phi_0`` (ARL to false alarm and delay for a change at 0),
  from ``phi = 1 + M phi``;
* ``psi = phi_0 + M_inf psi``, the sum over change points of the unconditional
  delays, which feeds the lower bound;
* the conditional average detection delay ``delta_tau / rho_tau`` with
  ``delta_tau = M_inf^tau phi_0`` and ``rho_tau = M_inf^tau 1``;
* quasi-stationary quantities of the randomized start.

The drift map decides which chart is analysed; with ``DriftMap.sr()`` these
are the Shiryaev-Roberts characteristics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .discretization import (
    DiscreteOperator,
    DriftMap,
    Grid,
    build_conjugate_operator,
    build_forward_operator,
    trapezoid_pair,
)
from .models import LikelihoodRatioModel, Measure
from .solvers import (
    EigenResult,
    SecondKindSolver,
    SolveOptions,
    iterate_recursion,
    leading_left_eigenpair,
)

log = logging.getLogger(__name__)

STEADY_RTOL = 1e-6
STEADY_WINDOW = 25


def _drift_of(spec) -> DriftMap:
    if isinstance(spec, DriftMap):
        return spec
    return spec.drift


@dataclass(frozen=True, eq=False)
class PerformanceVectors:
    """Sampled ``phi_inf``, ``phi_0`` and ``psi`` on ``grid.nodes``."""

    grid: Grid
    phi_inf: np.ndarray
    phi_0: np.ndarray
    psi: np.ndarray
    M_inf: DiscreteOperator | None = field(default=None, repr=False)

    def arl(self, r: float) -> float:
        return float(self.grid.interpolate(self.phi_inf, r))

    def add0(self, r: float) -> float:
        return float(self.grid.interpolate(self.phi_0, r))

    def psi_at(self, r: float) -> float:
        return float(self.grid.interpolate(self.psi, r))


def compute_performance_vectors(model: LikelihoodRatioModel, spec, grid: Grid,
                                opts: SolveOptions | None = None,
                                M_inf: DiscreteOperator | None = None,
                                keep_operator: bool = True) -> PerformanceVectors:
    """Solve ``phi_i = 1 + M_i phi_i`` (i = 0, inf) and ``psi = phi_0 + M_inf psi``.

    ``spec`` is a ``ProcedureSpec`` or a bare ``DriftMap``.  The post-change
    operator is released as soon as ``phi_0`` is known; the pre-change one is
    kept on the result (unless ``keep_operator`` is False) since the delay
    recursions need it.
    """
    drift = _drift_of(spec)
    opts = opts or SolveOptions()
    M0 = build_forward_operator(model, Measure.POST, grid, drift)
    phi_0 = SecondKindSolver(M0, opts).solve(np.ones(grid.size))
    del M0
    if M_inf is None:
        M_inf = build_forward_operator(model, Measure.PRE, grid, drift)
    solver = SecondKindSolver(M_inf, opts)
    phi_inf = solver.solve(np.ones(grid.size))
    psi = solver.solve(phi_0)
    del solver
    return PerformanceVectors(grid, phi_inf, phi_0, psi, M_inf if keep_operator else None)


def arl_vector(model: LikelihoodRatioModel, spec, grid: Grid,
               opts: SolveOptions | None = None,
               M_inf: DiscreteOperator | None = None) -> np.ndarray:
    """Only ``phi_inf``; the cheap path used while searching thresholds."""
    drift = _drift_of(spec)
    if M_inf is None:
        M_inf = build_forward_operator(model, Measure.PRE, grid, drift)
    return SecondKindSolver(M_inf, opts).solve(np.ones(grid.size))


# -- conditional detection delay ------------------------------------------------


@dataclass(frozen=True, eq=False)
class PerformanceProfile:
    """``tau -> E_tau[T - tau | T > tau]`` at one head start ``r``."""

    r: float
    tau_values: np.ndarray
    add: np.ndarray
    rho: np.ndarray
    steady_state: float
    sup_add: float
    converged: bool
    converged_at: int | None

    @property
    def argmax_tau(self) -> int:
        return int(self.tau_values[int(np.argmax(self.add))])

    def at(self, tau: int) -> float:
        """Delay at change point ``tau``; beyond the computed range this is the steady state."""
        if tau < 0:
            raise ValueError("tau must be >= 0")
        if tau < len(self.add):
            return float(self.add[tau])
        return self.steady_state


def _default_tau_max(vectors: PerformanceVectors) -> int:
    # roughly ten times the ARL; the stability window normally fires far earlier
    return int(10 * max(float(np.max(vectors.phi_inf)), 10.0))


def add_profile(vectors: PerformanceVectors, M_pre: DiscreteOperator | None, r: float,
                opts: SolveOptions | None = None, tau_max: int | None = None,
                rtol: float = STEADY_RTOL, window: int = STEADY_WINDOW) -> PerformanceProfile:
    """Conditional average detection delay profile at head start ``r``.

    ``delta`` and ``rho`` are advanced on the whole grid and read off at ``r``
    by linear interpolation.  Steady state is declared once the ratio has
    changed by less than ``rtol`` (relative) for ``window`` consecutive
    change points; without that the profile is returned with
    ``converged=False``.
    """
    M_pre = M_pre if M_pre is not None else vectors.M_inf
    if M_pre is None:
        raise ValueError("the pre-change operator is required")
    grid = vectors.grid
    j, s = grid.locate(r)

    def read(u):
        return (1.0 - s) * u[j] + s * u[j + 1]

    tau_max = _default_tau_max(vectors) if tau_max is None else tau_max
    U = np.column_stack([vectors.phi_0, np.ones(grid.size)])
    adds = [read(U[:, 0]) / read(U[:, 1])]
    rhos = [1.0]
    calm = 0
    state = {"converged_at": None}

    def stop(tau, u):
        nonlocal calm
        d, p = read(u[:, 0]), read(u[:, 1])
        ratio = d / p
        calm = calm + 1 if abs(ratio - adds[-1]) <= rtol * abs(ratio) else 0
        adds.append(ratio)
        rhos.append(p)
        if calm >= window:
            state["converged_at"] = tau
            return True
        return p <= 0.0

    for _ in iterate_recursion(M_pre, U, tau_max, stop):
        pass
    add = np.asarray(adds)
    converged = state["converged_at"] is not None
    steady = float(add[-1])
    if not converged:
        log.warning("delay profile at r=%g not steady after %d change points", r, tau_max)
    return PerformanceProfile(
        r=float(r),
        tau_values=np.arange(len(add)),
        add=add,
        rho=np.asarray(rhos),
        steady_state=steady,
        sup_add=float(max(np.max(add), steady)),
        converged=converged,
        converged_at=state["converged_at"],
    )


@dataclass(frozen=True, eq=False)
class ProfileScan:
    """Delay profiles at every grid node, summarized.

    ``sup_add`` and ``steady_state`` are per node; ``increasing`` flags
    profiles that never dip by more than ``dip_rtol`` (relative) from one
    change point to the next; ``snapshots`` holds the full delay vector at
    the requested change points.
    """

    grid: Grid
    steady_state: np.ndarray
    sup_add: np.ndarray
    argmax_tau: np.ndarray
    increasing: np.ndarray
    snapshots: dict[int, np.ndarray]
    converged: bool
    converged_at: int | None

    def j_p(self) -> np.ndarray:
        return np.maximum(self.sup_add, self.steady_state)


def scan_profiles(vectors: PerformanceVectors, M_pre: DiscreteOperator | None = None,
                  tau_max: int | None = None, snapshot_taus=(),
                  rtol: float = STEADY_RTOL, window: int = STEADY_WINDOW,
                  dip_rtol: float = 1e-6, node_limit: int | None = None) -> ProfileScan:
    """Run the ``delta``/``rho`` recursion once and summarize every node's profile.

    Steady state uses the same stability rule as :func:`add_profile`, applied
    to the largest relative change over nodes ``0 .. node_limit``.
    """
    M_pre = M_pre if M_pre is not None else vectors.M_inf
    if M_pre is None:
        raise ValueError("the pre-change operator is required")
    grid = vectors.grid
    tau_max = _default_tau_max(vectors) if tau_max is None else tau_max
    sl = slice(0, grid.size if node_limit is None else node_limit + 1)
    U = np.column_stack([vectors.phi_0, np.ones(grid.size)])
    ratio = vectors.phi_0.copy()
    sup = ratio.copy()
    argmax = np.zeros(grid.size, dtype=int)
    increasing = np.ones(grid.size, dtype=bool)
    wanted = {int(t) for t in snapshot_taus}
    snaps = {0: ratio.copy()} if 0 in wanted else {}
    calm = 0
    converged_at = None
    tau = 0
    for tau, u in enumerate(iterate_recursion(M_pre, U, tau_max), start=1):
        with np.errstate(divide="ignore", invalid="ignore"):
            new = u[:, 0] / u[:, 1]
        new = np.where(u[:, 1] > 0, new, ratio)
        increasing &= new >= ratio * (1.0 - dip_rtol)
        higher = new > sup
        sup = np.where(higher, new, sup)
        argmax = np.where(higher, tau, argmax)
        change = np.max(np.abs(new[sl] - ratio[sl]) / np.abs(new[sl]))
        ratio = new
        if tau in wanted:
            snaps[tau] = ratio.copy()
        calm = calm + 1 if change <= rtol else 0
        if calm >= window and tau >= max(wanted, default=0):
            converged_at = tau
            break
    if converged_at is None:
        log.warning("profile scan not steady after %d change points", tau)
    for t in wanted:
        # beyond convergence the profile equals its steady state
        snaps.setdefault(t, ratio.copy())
    return ProfileScan(grid, ratio, np.maximum(sup, ratio), argmax, increasing, snaps,
                       converged_at is not None, converged_at)


def lower_bound(vectors: PerformanceVectors, r: float) -> float:
    """``(r phi_0(r) + psi(r)) / (r + phi_inf(r))``."""
    if r < 0:
        raise ValueError("r must be >= 0")
    return (r * vectors.add0(r) + vectors.psi_at(r)) / (r + vectors.arl(r))


def lower_bound_vector(vectors: PerformanceVectors) -> np.ndarray:
    r = vectors.grid.nodes
    return (r * vectors.phi_0 + vectors.psi) / (r + vectors.phi_inf)


# -- local false alarm probabilities -------------------------------------------


@dataclass(frozen=True, eq=False)
class RhoSequence:
    """``rho_tau(x_j) = P_inf[T > tau]`` for ``tau = 0..tau_max`` (rows) on a grid."""

    grid: Grid
    values: np.ndarray

    @property
    def tau_max(self) -> int:
        return self.values.shape[0] - 1

    def at(self, r: float) -> np.ndarray:
        j, s = self.grid.locate(r)
        return (1.0 - s) * self.values[:, j] + s * self.values[:, j + 1]


def rho_sequence(M_pre: DiscreteOperator, tau_max: int) -> RhoSequence:
    rows = [np.ones(M_pre.size)]
    rows.extend(u.copy() for u in iterate_recursion(M_pre, rows[0], tau_max))
    return RhoSequence(M_pre.grid, np.vstack(rows))


def local_false_alarm_prob(rho: RhoSequence | np.ndarray, r: float | None, k: int, m: int) -> float:
    """``P_inf[T <= k + m | T > k] = 1 - rho_{k+m}(r) / rho_k(r)``.

    ``rho`` is either a :class:`RhoSequence` (then ``r`` selects the head
    start) or the 1-D sequence ``rho_0(r), rho_1(r), ...`` itself.
    """
    if m < 1 or k < 0:
        raise ValueError("need k >= 0 and m >= 1")
    seq = rho.at(r) if isinstance(rho, RhoSequence) else np.asarray(rho, dtype=float)
    if k + m >= len(seq):
        raise ValueError(f"rho known up to tau={len(seq) - 1}, need {k + m}")
    if not seq[k] > np.finfo(float).tiny:
        raise ZeroDivisionError(f"rho_{k}(r) is numerically zero")
    return float(np.clip(1.0 - seq[k + m] / seq[k], 0.0, 1.0))


# -- randomized (quasi-stationary) start -----------------------------------------


@dataclass(frozen=True, eq=False)
class SrpCharacteristics:
    lambda_max: float
    q: np.ndarray
    mu: float
    arl: float
    add: float
    eigen: EigenResult = field(repr=False)

    @property
    def arl_from_eigenvalue(self) -> float:
        return 1.0 / (1.0 - self.lambda_max)


def quasi_stationary(model: LikelihoodRatioModel, grid: Grid, spec=None,
                     opts: SolveOptions | None = None, start=None,
                     N_op: DiscreteOperator | None = None) -> EigenResult:
    drift = DriftMap.sr() if spec is None else _drift_of(spec)
    if N_op is None:
        N_op = build_conjugate_operator(model, grid, drift)
    return leading_left_eigenpair(N_op, grid.weights, opts, start=start)


def srp_characteristics(model: LikelihoodRatioModel, grid: Grid, vectors: PerformanceVectors,
                        opts: SolveOptions | None = None, spec=None, start=None,
                        eigen: EigenResult | None = None) -> SrpCharacteristics:
    """Quasi-stationary density, its mean and the randomized-start ARL and delay."""
    if eigen is None:
        eigen = quasi_stationary(model, grid, spec, opts, start)
    w = grid.weights
    q = eigen.q
    mu = trapezoid_pair(w, grid.nodes, q)
    arl = trapezoid_pair(w, vectors.phi_inf, q)
    add = trapezoid_pair(w, vectors.phi_0, q)
    return SrpCharacteristics(eigen.lambda_max, q, mu, arl, add, eigen)


def weighted_profile(vectors: PerformanceVectors, M_pre: DiscreteOperator | None, q,
                     tau_max: int) -> np.ndarray:
    """``tau -> <w, delta_tau q> / <w, rho_tau q>`` for ``tau = 0..tau_max``.

    For the quasi-stationary ``q`` this is the delay of the randomized start
    for a change at ``tau``; it should not depend on ``tau``.
    """
    M_pre = M_pre if M_pre is not None else vectors.M_inf
    wq = vectors.grid.weights * np.asarray(q, dtype=float)
    U = np.column_stack([vectors.phi_0, np.ones(vectors.grid.size)])
    out = [float(wq @ U[:, 0] / (wq @ U[:, 1]))]
    for u in iterate_recursion(M_pre, U, tau_max):
        out.append(float(wq @ u[:, 0] / (wq @ u[:, 1])))
    return np.asarray(out)
