"""Threshold calibration and the choice of the head start.

``calibrate`` finds the threshold ``nu`` for which the ARL to false alarm
of a chart equals a target ``gamma``.  The head start is re-resolved at
every trial threshold, because ``r_nu``, ``r_star`` and the quasi-stationary
mean all move with ``nu``:

* ``r_nu``   -- smallest node ``r`` whose delay profile never exceeds its
  steady-state limit (``find_r_nu``);
* ``r_star`` -- smallest node ``r`` whose delay profile is nondecreasing in
  the change point (``find_r_star``);
* ``qsd-mean`` -- the mean of the quasi-stationary density;
* ``srp`` -- the randomized start itself, whose ARL is the ``q``-weighted
  average of ``phi_inf``.

The root finder starts from the renewal-theory pilot ``nu = w (gamma + r)``,
refines ``w`` from every probe, and switches to a safeguarded secant step
once the root is bracketed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .discretization import DiscreteOperator, Grid, build_grid
from .metrics import (
    STEADY_RTOL,
    STEADY_WINDOW,
    PerformanceVectors,
    ProfileScan,
    SrpCharacteristics,
    arl_vector,
    compute_performance_vectors,
    quasi_stationary,
    scan_profiles,
    srp_characteristics,
    weighted_profile,
)
from .models import LikelihoodRatioModel
from .procedures import Chart, ChartCharacteristics, InitKind, InitStrategy, ProcedureSpec
from .solvers import SolveOptions

log = logging.getLogger(__name__)

#: starting value of the overshoot constant before the first probe
DEFAULT_PILOT_W = 0.9


class CalibrationError(RuntimeError):
    """The threshold search or a head-start search failed."""


def pilot_threshold(gamma: float, r: float, w: float) -> float:
    """Renewal approximation ``E_inf[T] ~ nu / w - r`` solved for ``nu``."""
    if not gamma >= 1:
        raise ValueError("gamma must be >= 1")
    if not 0.0 < w < 1.0:
        raise ValueError("w must lie in (0, 1)")
    if not r >= 0:
        raise ValueError("r must be >= 0")
    return w * (gamma + r)


@dataclass(frozen=True)
class CalibrationTolerances:
    """Stopping rules of the search.

    Attributes
    ----------
    arl_rtol : float
        Accept ``nu`` once ``|ARL - gamma| <= arl_rtol * gamma``.
    max_probes : int
        Cap on the number of trial thresholds.
    coarse_n : int or None
        When smaller than ``grid_n``, calibrate on this grid first and use
        the result as the starting point of the fine search.
    pilot_w : float
        Initial overshoot constant.
    tau_max : int or None
        Horizon for the delay-profile scans (default: ten times the ARL).
    """

    arl_rtol: float = 1e-3
    max_probes: int = 40
    coarse_n: int | None = None
    pilot_w: float = DEFAULT_PILOT_W
    tau_max: int | None = None
    steady_rtol: float = STEADY_RTOL
    steady_window: int = STEADY_WINDOW

    def __post_init__(self):
        if not self.arl_rtol > 0:
            raise ValueError("arl_rtol must be positive")
        if self.max_probes < 2:
            raise ValueError("max_probes must be >= 2")
        if not 0.0 < self.pilot_w < 1.0:
            raise ValueError("pilot_w must lie in (0, 1)")


@dataclass(frozen=True)
class Probe:
    nu: float
    r: float | None
    arl: float


@dataclass(frozen=True, eq=False)
class _Evaluation:
    nu: float
    r: float | None
    arl: float
    complete: bool
    grid: Grid
    vectors: PerformanceVectors | None = None
    scan: ProfileScan | None = None
    srp: SrpCharacteristics | None = None


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Calibrated threshold, head start and the solution at that threshold.

    ``r`` is None for the randomized start.  ``achieved_arl`` is read from
    ``characteristics``, i.e. from a complete solve at the returned ``nu``.
    """

    nu: float
    r: float | None
    achieved_arl: float
    gamma: float
    strategy: InitStrategy
    grid_n: int
    pilot_w: float
    chart: Chart
    probes: tuple[Probe, ...]
    characteristics: ChartCharacteristics = field(repr=False)
    scan: ProfileScan | None = field(default=None, repr=False)
    within_tolerance: bool = True

    @property
    def randomized(self) -> bool:
        return self.r is None

    @property
    def relative_error(self) -> float:
        return abs(self.achieved_arl - self.gamma) / self.gamma

    @property
    def srp(self) -> SrpCharacteristics | None:
        return self.characteristics.srp

    @property
    def spec(self) -> ProcedureSpec:
        return self.characteristics.spec

    def arl_increasing_in_nu(self) -> bool:
        """Whether the probe history has ARL strictly increasing in ``nu``."""
        pts = sorted({(p.nu, p.arl) for p in self.probes})
        return all(b[1] > a[1] for a, b in zip(pts, pts[1:]) if b[0] > a[0])


# -- head-start searches -----------------------------------------------------------


def _smallest_true(pred: np.ndarray, what: str) -> int:
    """Bisection for the first True of a predicate assumed monotone (False ... True)."""
    idx = np.flatnonzero(pred)
    if idx.size == 0:
        raise CalibrationError(f"{what}: predicate never holds on the grid "
                               "(grid too coarse or tau_max too small)")
    lo, hi = -1, int(idx[-1])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred[mid]:
            hi = mid
        else:
            lo = mid
    stray = np.count_nonzero(pred[:hi])
    broken = np.count_nonzero(~pred[hi:idx[-1] + 1])
    if stray or broken:
        log.warning("%s: predicate not monotone in r (%d early hits, %d later misses); "
                    "grid resolution may be insufficient", what, stray, broken)
    return hi


def _scan(vectors: PerformanceVectors, tau_max, rtol, window, snapshot_taus=()) -> ProfileScan:
    scan = scan_profiles(vectors, tau_max=tau_max, snapshot_taus=snapshot_taus,
                         rtol=rtol, window=window)
    if not scan.converged:
        raise CalibrationError("delay profiles did not reach steady state; increase tau_max")
    return scan


def find_r_nu(vectors: PerformanceVectors, scan: ProfileScan | None = None,
              tau_max: int | None = None, rtol: float = STEADY_RTOL,
              window: int = STEADY_WINDOW) -> float:
    """Smallest node ``r`` in ``[0, nu)`` whose profile supremum is its steady state.

    The predicate is ``sup_tau ADD_tau(r) <= steady(r) * (1 + 1e-6)``.
    """
    scan = _scan(vectors, tau_max, rtol, window) if scan is None else scan
    pred = scan.sup_add[:-1] <= scan.steady_state[:-1] * (1.0 + 1e-6)
    return float(vectors.grid.nodes[_smallest_true(pred, "r_nu")])


def find_r_star(vectors: PerformanceVectors, scan: ProfileScan | None = None,
                tau_max: int | None = None, rtol: float = STEADY_RTOL,
                window: int = STEADY_WINDOW) -> float:
    """Smallest node ``r`` in ``[0, nu)`` whose profile is nondecreasing in ``tau``."""
    scan = _scan(vectors, tau_max, rtol, window) if scan is None else scan
    return float(vectors.grid.nodes[_smallest_true(scan.increasing[:-1], "r_star")])


# -- one trial threshold -----------------------------------------------------------


def _chart_for(chart: Chart, strategy: InitStrategy) -> Chart:
    chart = Chart(chart)
    if chart is Chart.EWMA:
        raise ValueError("EWMA thresholds are user-supplied and are not calibrated")
    if strategy.randomized:
        if chart not in (Chart.SR, Chart.SRP):
            raise ValueError("the randomized start is calibrated for the SR chart only")
        return Chart.SRP
    if chart is Chart.SRP:
        raise ValueError("the SRP chart needs the 'srp' strategy")
    return chart


class _Evaluator:
    def __init__(self, model, chart, strategy, grid_n, opts, tol, snapshot_taus=()):
        self.snapshot_taus = tuple(int(t) for t in snapshot_taus)
        self.model = model
        self.chart = chart
        self.strategy = strategy
        self.grid_n = grid_n
        self.opts = opts
        self.tol = tol
        self.q_prev: tuple[np.ndarray, np.ndarray] | None = None  # (relative nodes, q)

    def _spec(self, nu, r) -> ProcedureSpec:
        if self.chart is Chart.SRP:
            return ProcedureSpec.srp(nu)
        return ProcedureSpec(self.chart, nu, r=r, init=self.strategy)

    def _q_start(self, grid: Grid):
        if self.q_prev is None:
            return None
        rel, q = self.q_prev
        start = np.interp((grid.nodes - grid.lo) / (grid.hi - grid.lo), rel, q)
        return start if np.dot(grid.weights, start) > 0 else None

    def __call__(self, nu: float, complete: bool = False) -> _Evaluation:
        kind = self.strategy.kind
        grid = build_grid(0.0, nu, self.grid_n)
        drift = self._spec(nu, 0.0).drift
        tol = self.tol
        if kind in (InitKind.FIXED, InitKind.CLASSICAL):
            r = self.strategy.resolve(nu)
            if not complete:
                phi = arl_vector(self.model, drift, grid, self.opts)
                return _Evaluation(nu, r, float(grid.interpolate(phi, r)), False, grid)
            vectors = compute_performance_vectors(self.model, drift, grid, self.opts,
                                                  keep_operator=False)
            return _Evaluation(nu, r, vectors.arl(r), True, grid, vectors)
        if kind in (InitKind.R_NU, InitKind.R_STAR):
            vectors = compute_performance_vectors(self.model, drift, grid, self.opts)
            scan = _scan(vectors, tol.tau_max, tol.steady_rtol, tol.steady_window,
                         self.snapshot_taus)
            finder = find_r_nu if kind is InitKind.R_NU else find_r_star
            r = finder(vectors, scan)
            vectors = replace(vectors, M_inf=None)
            return _Evaluation(nu, r, vectors.arl(r), True, grid, vectors, scan)
        # quasi-stationary strategies
        vectors = compute_performance_vectors(self.model, drift, grid, self.opts,
                                              keep_operator=False)
        eigen = quasi_stationary(self.model, grid, drift, self.opts, start=self._q_start(grid))
        srp = srp_characteristics(self.model, grid, vectors, self.opts, eigen=eigen)
        self.q_prev = ((grid.nodes - grid.lo) / (grid.hi - grid.lo), srp.q)
        if kind is InitKind.QSD_MEAN:
            return _Evaluation(nu, srp.mu, vectors.arl(srp.mu), True, grid, vectors, srp=srp)
        return _Evaluation(nu, None, srp.arl, True, grid, vectors, srp=srp)


# -- threshold search ----------------------------------------------------------------


def _head_start(ev: _Evaluation) -> float:
    if ev.r is not None:
        return ev.r
    return ev.srp.mu if ev.srp is not None else 0.0


def calibrate(model: LikelihoodRatioModel, strategy: InitStrategy | str, gamma: float,
              grid_n: int, tolerances: CalibrationTolerances | None = None,
              chart: Chart | str = Chart.SR, opts: SolveOptions | None = None,
              nu_start: float | None = None, snapshot_taus=()) -> CalibrationResult:
    """Threshold ``nu`` (and head start) with ARL to false alarm equal to ``gamma``.

    Parameters
    ----------
    model : LikelihoodRatioModel
    strategy : InitStrategy or str
        Head-start rule; strings are parsed by :meth:`InitStrategy.parse`.
    gamma : float
        Target ARL to false alarm, ``> 1``.
    grid_n : int
        Number of grid intervals on ``[0, nu]``; held fixed across trials.
    tolerances : CalibrationTolerances, optional
    chart : Chart or str
        ``sr`` (default) or ``cusum``; the ``srp`` strategy implies ``srp``.
    opts : SolveOptions, optional
    nu_start : float, optional
        First trial threshold; defaults to the pilot ``w (gamma + r)``.
    snapshot_taus : sequence of int
        Change points at which the ``r_nu`` / ``r_star`` scans keep the full
        delay vector (see :func:`delay_at`).

    Raises
    ------
    CalibrationError
        If the root cannot be bracketed within ``max_probes`` trials or a
        head-start search fails.
    """
    if isinstance(strategy, str):
        strategy = InitStrategy.parse(strategy)
    if not gamma > 1:
        raise ValueError("gamma must be > 1")
    tol = tolerances or CalibrationTolerances()
    chart = _chart_for(chart, strategy)
    w = tol.pilot_w
    coarse = None
    if tol.coarse_n is not None and tol.coarse_n < grid_n:
        coarse = calibrate(model, strategy, gamma, tol.coarse_n,
                           replace(tol, coarse_n=None), chart, opts, nu_start)
        nu_start, w = coarse.nu, coarse.pilot_w
    evaluate = _Evaluator(model, chart, strategy, grid_n, opts, tol, snapshot_taus)
    if coarse is not None and coarse.srp is not None:
        g = coarse.characteristics.grid
        evaluate.q_prev = ((g.nodes - g.lo) / (g.hi - g.lo), coarse.srp.q)

    r0 = strategy.r if strategy.kind is InitKind.FIXED else 0.0
    nu = pilot_threshold(gamma, r0, w) if nu_start is None else float(nu_start)
    if strategy.kind is InitKind.FIXED and nu <= strategy.r:
        nu = strategy.r + max(1.0, gamma * 1e-3)
    target = tol.arl_rtol * gamma
    probes: list[Probe] = []
    below: _Evaluation | None = None   # largest nu with ARL < gamma
    above: _Evaluation | None = None   # smallest nu with ARL > gamma
    best: _Evaluation | None = None
    prev: _Evaluation | None = None
    done = False
    for _ in range(tol.max_probes):
        ev = evaluate(nu)
        g = ev.arl - gamma
        probes.append(Probe(ev.nu, ev.r, ev.arl))
        log.info("probe nu=%.6g r=%s arl=%.6g", ev.nu, ev.r, ev.arl)
        if best is None or abs(g) < abs(best.arl - gamma):
            best = ev
        if abs(g) <= target:
            done = True
            break
        if g < 0 and (below is None or ev.nu > below.nu):
            below = ev
        if g > 0 and (above is None or ev.nu < above.nu):
            above = ev
        r = _head_start(ev)
        w_new = ev.nu / (ev.arl + r)
        if 0.0 < w_new < 1.0:
            w = w_new
        if below is not None and above is not None:
            if above.nu - below.nu <= above.nu / grid_n:
                break
            cand = None
            if prev is not None and prev.nu != ev.nu and prev.arl != ev.arl:
                cand = ev.nu - g * (ev.nu - prev.nu) / (ev.arl - prev.arl)
            width = above.nu - below.nu
            if cand is None or not (below.nu + 0.01 * width < cand < above.nu - 0.01 * width):
                cand = 0.5 * (below.nu + above.nu)
        else:
            cand = ev.nu * (gamma + r) / (ev.arl + r)
            if g < 0:
                cand = min(max(cand, ev.nu * 1.01), ev.nu * 4.0)
            else:
                cand = max(min(cand, ev.nu * 0.99), ev.nu * 0.25)
            if strategy.kind is InitKind.FIXED and cand <= strategy.r:
                cand = 0.5 * (ev.nu + strategy.r)
        prev, nu = ev, cand
    else:
        if below is None or above is None:
            raise CalibrationError(f"could not bracket the threshold for gamma={gamma} "
                                   f"within {tol.max_probes} probes")
    final = best if best.complete else evaluate(best.nu, complete=True)
    spec = ProcedureSpec.srp(final.nu) if chart is Chart.SRP else \
        ProcedureSpec(chart, final.nu, r=final.r, init=strategy)
    chars = ChartCharacteristics(spec, model, final.grid, final.vectors, final.srp, opts)
    achieved = chars.arl
    within = abs(achieved - gamma) <= target
    if not within:
        log.warning("calibration stopped at nu=%.6g with ARL %.6g (target %.6g)%s",
                    final.nu, achieved, gamma, "" if done else "; bracket below one grid cell")
    return CalibrationResult(
        nu=final.nu,
        r=final.r,
        achieved_arl=achieved,
        gamma=float(gamma),
        strategy=strategy,
        grid_n=grid_n,
        pilot_w=final.nu / (achieved + _head_start(final)),
        chart=chart,
        probes=tuple(probes),
        characteristics=chars,
        scan=final.scan,
        within_tolerance=within,
    )


@dataclass(frozen=True, eq=False)
class ResolvedStrategy:
    """A head-start rule applied at a given threshold (no search)."""

    nu: float
    r: float | None
    achieved_arl: float
    strategy: InitStrategy
    chart: Chart
    characteristics: ChartCharacteristics = field(repr=False)
    scan: ProfileScan | None = field(default=None, repr=False)

    @property
    def srp(self) -> SrpCharacteristics | None:
        return self.characteristics.srp


def resolve_strategy(model: LikelihoodRatioModel, strategy: InitStrategy | str, nu: float,
                     grid_n: int, chart: Chart | str = Chart.SR,
                     opts: SolveOptions | None = None,
                     tolerances: CalibrationTolerances | None = None,
                     snapshot_taus=()) -> ResolvedStrategy:
    """Resolve the head start of ``strategy`` at the fixed threshold ``nu``."""
    if isinstance(strategy, str):
        strategy = InitStrategy.parse(strategy)
    chart = _chart_for(chart, strategy)
    tol = tolerances or CalibrationTolerances()
    ev = _Evaluator(model, chart, strategy, grid_n, opts, tol, snapshot_taus)(nu, complete=True)
    spec = ProcedureSpec.srp(nu) if chart is Chart.SRP else \
        ProcedureSpec(chart, nu, r=ev.r, init=strategy)
    chars = ChartCharacteristics(spec, model, ev.grid, ev.vectors, ev.srp, opts)
    return ResolvedStrategy(nu, ev.r, chars.arl, strategy, chart, chars, ev.scan)


# -- delays of a resolved strategy ------------------------------------------------------


def worst_delay(result: CalibrationResult | ResolvedStrategy,
                M_pre: DiscreteOperator | None = None) -> float:
    """Pollak's worst-case delay ``J_P = sup_tau E_tau[T - tau | T > tau]``.

    The randomized start is an equalizer, so its ``J_P`` is the
    quasi-stationary delay.  Node-valued head starts read the scan; any other
    head start runs its own profile.
    """
    if result.r is None:
        return float(result.srp.add)
    if result.scan is not None:
        grid = result.characteristics.grid
        j = grid.nearest_index(result.r)
        if grid.nodes[j] == result.r:
            return float(result.scan.j_p()[j])
    return result.characteristics.profile(result.r, M_pre=M_pre).sup_add


@dataclass(frozen=True)
class DelayCurve:
    taus: np.ndarray
    add: np.ndarray
    steady_state: float


def delay_at(result: CalibrationResult | ResolvedStrategy, taus,
             M_pre: DiscreteOperator | None = None) -> DelayCurve:
    """Conditional delays ``E_tau[T - tau | T > tau]`` at the change points ``taus``."""
    taus = np.array([int(t) for t in taus], dtype=int)
    if taus.size and taus.min() < 0:
        raise ValueError("change points must be >= 0")
    chars = result.characteristics
    if result.r is None:
        M_pre = chars.pre_change_operator() if M_pre is None else M_pre
        prof = weighted_profile(chars.vectors, M_pre, result.srp.q, int(taus.max(initial=0)))
        return DelayCurve(taus, prof[taus], float(result.srp.add))
    scan = result.scan
    if scan is not None and all(int(t) in scan.snapshots for t in taus):
        j = chars.grid.nearest_index(result.r)
        if chars.grid.nodes[j] == result.r:
            add = np.array([scan.snapshots[int(t)][j] for t in taus])
            return DelayCurve(taus, add, float(scan.steady_state[j]))
    prof = chars.profile(result.r, M_pre=M_pre)
    return DelayCurve(taus, np.array([prof.at(int(t)) for t in taus]), prof.steady_state)
