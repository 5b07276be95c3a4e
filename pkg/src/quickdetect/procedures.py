"""Chart descriptions: Shiryaev-Roberts (deterministic or randomized start),
CUSUM with head start and the multiplicative EWMA.

A chart is a drift map, a continuation interval and an initialization.  The
statistic is updated as ``next = b(current) * l_n`` and the chart stops when
the statistic leaves the continuation interval (``>= nu`` for the one-sided
charts, outside ``(nu1, nu2)`` for EWMA).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .discretization import DiscreteOperator, DriftMap, Grid, build_forward_operator, build_grid
from .metrics import (
    PerformanceProfile,
    PerformanceVectors,
    SrpCharacteristics,
    add_profile,
    compute_performance_vectors,
    srp_characteristics,
)
from .models import LikelihoodRatioModel, Measure
from .solvers import SolveOptions


class Chart(enum.Enum):
    SR = "sr"
    SRP = "srp"
    CUSUM = "cusum"
    EWMA = "ewma"


class InitKind(enum.Enum):
    FIXED = "fixed"
    CLASSICAL = "classical"
    R_NU = "r-nu"
    R_STAR = "r-star"
    QSD_MEAN = "qsd-mean"
    SRP = "srp"


@dataclass(frozen=True)
class InitStrategy:
    """How the head start is chosen.  ``r`` is only used by ``FIXED``."""

    kind: InitKind
    r: float | None = None

    def __post_init__(self):
        kind = InitKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is InitKind.FIXED:
            if self.r is None or not self.r >= 0:
                raise ValueError("fixed initialization needs r >= 0")
            object.__setattr__(self, "r", float(self.r))
        elif self.r is not None:
            raise ValueError(f"{kind.value} does not take an explicit r")

    @classmethod
    def parse(cls, text: str) -> "InitStrategy":
        text = text.strip().lower()
        if text.startswith("fixed:"):
            return cls(InitKind.FIXED, float(text.split(":", 1)[1]))
        aliases = {"sr": "classical", "rnu": "r-nu", "r_nu": "r-nu", "rstar": "r-star",
                   "r_star": "r-star", "mu": "qsd-mean", "sr-mu": "qsd-mean"}
        return cls(InitKind(aliases.get(text, text)))

    @property
    def label(self) -> str:
        if self.kind is InitKind.FIXED:
            return f"fixed:{self.r:g}"
        return self.kind.value

    @property
    def randomized(self) -> bool:
        return self.kind is InitKind.SRP

    def resolve(self, nu: float) -> float | None:
        """Head start for the strategies that need no computation; None otherwise."""
        if self.kind is InitKind.CLASSICAL:
            return 0.0
        if self.kind is InitKind.FIXED:
            if self.r >= nu:
                raise ValueError(f"head start r={self.r} must be below the threshold {nu}")
            return self.r
        return None


InitStrategy.CLASSICAL = InitStrategy(InitKind.CLASSICAL)


class StoppingKind(enum.Enum):
    UPPER_CROSSING = "upper"
    EXIT_INTERVAL = "exit"


@dataclass(frozen=True)
class StoppingRule:
    kind: StoppingKind
    lower: float
    upper: float

    def stops(self, value):
        value = np.asarray(value)
        if self.kind is StoppingKind.UPPER_CROSSING:
            return value >= self.upper
        return (value <= self.lower) | (value >= self.upper)


@dataclass(frozen=True)
class ProcedureSpec:
    """A chart with its thresholds and initialization.

    ``lower`` is 0 for the one-sided charts and ``nu1`` for EWMA; ``upper``
    is the threshold ``nu`` (``nu2`` for EWMA).  ``r`` is the deterministic
    head start (ignored by SRP, which draws it from the quasi-stationary law).
    """

    chart: Chart
    upper: float
    lower: float = 0.0
    r: float = 0.0
    alpha: float | None = None
    init: InitStrategy | None = None
    drift: DriftMap = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        chart = Chart(self.chart)
        object.__setattr__(self, "chart", chart)
        if chart is Chart.EWMA:
            alpha = 0.9 if self.alpha is None else float(self.alpha)
            object.__setattr__(self, "alpha", alpha)
            if not 0.0 < self.lower < 1.0 < self.upper:
                raise ValueError("EWMA needs 0 < nu1 < 1 < nu2")
            if not self.lower < self.r < self.upper:
                raise ValueError("EWMA head start must lie strictly inside (nu1, nu2)")
            drift = DriftMap.ewma(alpha)
        else:
            if self.alpha is not None:
                raise ValueError("alpha only applies to EWMA")
            if self.lower != 0.0:
                raise ValueError(f"{chart.value} charts use the interval [0, nu)")
            if not self.upper > 0:
                raise ValueError("threshold must be positive")
            if not 0.0 <= self.r < self.upper:
                raise ValueError(f"head start r={self.r} must satisfy 0 <= r < nu={self.upper}")
            drift = DriftMap.cusum() if chart is Chart.CUSUM else DriftMap.sr()
        object.__setattr__(self, "drift", drift)
        if self.init is None:
            init = InitStrategy(InitKind.SRP) if chart is Chart.SRP else InitStrategy(InitKind.FIXED, self.r)
            object.__setattr__(self, "init", init)

    @classmethod
    def sr(cls, nu: float, r: float = 0.0) -> "ProcedureSpec":
        return cls(Chart.SR, nu, r=r)

    @classmethod
    def srp(cls, nu: float) -> "ProcedureSpec":
        return cls(Chart.SRP, nu)

    @classmethod
    def cusum(cls, nu: float, r: float = 1.0) -> "ProcedureSpec":
        # the classical CUSUM starts at r = 1
        return cls(Chart.CUSUM, nu, r=r)

    @classmethod
    def ewma(cls, nu1: float, nu2: float, alpha: float = 0.9, r: float = 1.0) -> "ProcedureSpec":
        return cls(Chart.EWMA, nu2, lower=nu1, r=r, alpha=alpha)

    @property
    def domain(self) -> tuple[float, float]:
        return self.lower, self.upper

    @property
    def stopping_rule(self) -> StoppingRule:
        if self.chart is Chart.EWMA:
            return StoppingRule(StoppingKind.EXIT_INTERVAL, self.lower, self.upper)
        return StoppingRule(StoppingKind.UPPER_CROSSING, self.lower, self.upper)

    def grid(self, n_intervals: int) -> Grid:
        return build_grid(self.lower, self.upper, n_intervals)


def step_statistic(spec: ProcedureSpec, current, lr):
    """One update ``b(current) * lr`` of the chart statistic."""
    current = np.asarray(current, dtype=float)
    lr = np.asarray(lr, dtype=float)
    if np.any(lr <= 0):
        raise ValueError("likelihood ratios must be positive")
    if spec.chart is Chart.EWMA and np.any(current <= 0):
        raise ValueError("EWMA statistic must stay positive")
    out = spec.drift(current) * lr
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class ChartCharacteristics:
    """Fredholm solution for one chart; profiles are computed on demand."""

    spec: ProcedureSpec
    model: LikelihoodRatioModel
    grid: Grid
    vectors: PerformanceVectors
    srp: SrpCharacteristics | None = None
    opts: SolveOptions | None = field(default=None, repr=False)

    @property
    def arl(self) -> float:
        if self.spec.chart is Chart.SRP:
            return self.srp.arl
        return self.vectors.arl(self.spec.r)

    @property
    def add0(self) -> float:
        if self.spec.chart is Chart.SRP:
            return self.srp.add
        return self.vectors.add0(self.spec.r)

    def pre_change_operator(self) -> DiscreteOperator:
        """``M_inf``; rebuilt when the vectors were stored without it."""
        if self.vectors.M_inf is not None:
            return self.vectors.M_inf
        return build_forward_operator(self.model, Measure.PRE, self.grid, self.spec.drift)

    def profile(self, r: float | None = None, tau_max: int | None = None,
                M_pre: DiscreteOperator | None = None) -> PerformanceProfile:
        r = self.spec.r if r is None else r
        M_pre = self.pre_change_operator() if M_pre is None else M_pre
        return add_profile(self.vectors, M_pre, r, self.opts, tau_max=tau_max)


def operating_characteristics(spec: ProcedureSpec, model: LikelihoodRatioModel, grid_n: int,
                              opts: SolveOptions | None = None,
                              quasi_stationary: bool | None = None) -> ChartCharacteristics:
    """Discretize, solve and summarize the chart ``spec`` on ``grid_n`` intervals.

    The quasi-stationary start is computed for SRP, and for other charts
    when ``quasi_stationary`` is True.
    """
    grid = spec.grid(grid_n)
    vectors = compute_performance_vectors(model, spec, grid, opts)
    want_qsd = spec.chart is Chart.SRP if quasi_stationary is None else quasi_stationary
    srp = srp_characteristics(model, grid, vectors, opts, spec=spec) if want_qsd else None
    return ChartCharacteristics(spec, model, grid, vectors, srp, opts)
