"""Monte Carlo oracle for run lengths and detection delays.

Paths are simulated in fixed-size chunks, all paths of a chunk advancing
together as numpy arrays.  Chunk ``k`` draws from the ``k``-th child of
``SeedSequence(seed)``, so estimates depend on the seed and the chunk size
but not on the number of worker processes.

Conditioning on ``{T > tau}`` is done by rejection: paths that stop at or
before the change point are discarded and restarted, and the fraction of
discarded attempts is reported as an estimate of ``1 - rho_tau(r)``.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .discretization import Grid
from .models import LikelihoodRatioModel, Measure, sample_lr
from .procedures import Chart, ProcedureSpec

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 1 << 15
DEFAULT_MAX_STEPS = 10**7


class SimulationError(RuntimeError):
    """A simulated path exceeded the step cap."""


class QuantityKind(enum.Enum):
    ARL = "arl"
    ADD_AT = "add"
    SURVIVAL = "survival"


@dataclass(frozen=True)
class Quantity:
    """What to estimate: ``E_inf[T]``, ``E_tau[T - tau | T > tau]`` or ``P_inf[T > tau]``."""

    kind: QuantityKind
    tau: int | None = None

    def __post_init__(self):
        kind = QuantityKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is QuantityKind.ARL:
            if self.tau is not None:
                raise ValueError("the ARL takes no change point")
        elif self.tau is None or self.tau < 0:
            raise ValueError(f"{kind.value} needs a change point tau >= 0")

    @classmethod
    def arl(cls) -> "Quantity":
        return cls(QuantityKind.ARL)

    @classmethod
    def add_at(cls, tau: int) -> "Quantity":
        return cls(QuantityKind.ADD_AT, int(tau))

    @classmethod
    def survival(cls, tau: int) -> "Quantity":
        return cls(QuantityKind.SURVIVAL, int(tau))

    @property
    def label(self) -> str:
        return self.kind.value if self.tau is None else f"{self.kind.value}({self.tau})"


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with standard error ``std / sqrt(replications)``."""

    mean: float
    std_error: float
    replications: int
    seed: int
    quantity: Quantity
    rejection_rate: float | None = None

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.std_error
        return self.mean - half, self.mean + half

    def agrees_with(self, value: float, n_se: float = 3.0, rtol: float = 0.0) -> bool:
        """``|mean - value| <= max(rtol * |value|, n_se * std_error)``."""
        return abs(self.mean - value) <= max(rtol * abs(value), n_se * self.std_error)


class QsdSampler:
    """Inverse-transform sampler for a density sampled on a grid.

    The cumulative distribution is accumulated with the trapezoid rule at
    the nodes and interpolated linearly in between.
    """

    def __init__(self, grid: Grid, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (grid.size,) or np.any(q < 0):
            raise ValueError("q must be a nonnegative vector on the grid")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * grid.step * (q[1:] + q[:-1]))])
        if not cum[-1] > 0:
            raise ValueError("q has no mass")
        self.nodes = np.array(grid.nodes)
        self.cdf = cum / cum[-1]

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.interp(rng.random(size), self.cdf, self.nodes)


Initial = float | Callable[[np.random.Generator, int], np.ndarray]


def _starts(initial: Initial, rng, size) -> np.ndarray:
    if callable(initial):
        return np.asarray(initial(rng, size), dtype=float)
    return np.full(size, float(initial))


def _check_initial(spec: ProcedureSpec, initial: Initial | None) -> Initial:
    if initial is None:
        if spec.chart is Chart.SRP:
            raise ValueError("the randomized start needs a sampler (see QsdSampler)")
        return spec.r
    if not callable(initial):
        lo, hi = spec.domain
        if not (lo <= float(initial) < hi) or (spec.chart is Chart.EWMA and initial <= lo):
            raise ValueError(f"initial value {initial} outside the continuation region")
    return initial


def simulate_batch(spec: ProcedureSpec, model: LikelihoodRatioModel, starts,
                   change_point: int | None, rng: np.random.Generator,
                   max_steps: int = DEFAULT_MAX_STEPS,
                   horizon: int | None = None) -> np.ndarray:
    """Stopping times of independent paths started at ``starts``.

    Observation ``n`` is drawn from the pre-change law when ``n <= change_point``
    (always when ``change_point`` is None) and from the post-change law after.
    With a ``horizon``, paths still running after that many steps are
    abandoned and reported as ``horizon + 1``.
    """
    state = np.array(starts, dtype=float)
    rule = spec.stopping_rule
    out = np.zeros(state.size, dtype=np.int64)
    active = np.arange(state.size)
    n = 0
    while active.size:
        if horizon is not None and n >= horizon:
            out[active] = horizon + 1
            break
        n += 1
        if n > max_steps:
            raise SimulationError(f"{active.size} paths still running after {max_steps} steps")
        pre = change_point is None or n <= change_point
        lr = sample_lr(model, Measure.PRE if pre else Measure.POST, rng, active.size)
        state = spec.drift(state) * lr
        stop = rule.stops(state)
        if stop.any():
            out[active[stop]] = n
            keep = ~stop
            active = active[keep]
            state = state[keep]
    return out


def simulate_stopping_time(spec: ProcedureSpec, model: LikelihoodRatioModel, r: float,
                           change_point: int | None, rng: np.random.Generator,
                           max_steps: int = DEFAULT_MAX_STEPS) -> int:
    """One path from ``R_0 = r``; ``change_point=None`` means no change."""
    _check_initial(spec, r)
    return int(simulate_batch(spec, model, [r], change_point, rng, max_steps)[0])


def _chunk(args) -> tuple[np.ndarray, int]:
    spec, model, quantity, initial, seed_seq, size, max_steps = args
    rng = np.random.default_rng(seed_seq)
    if quantity.kind is QuantityKind.ARL:
        return simulate_batch(spec, model, _starts(initial, rng, size), None, rng, max_steps), size
    tau = quantity.tau
    if quantity.kind is QuantityKind.SURVIVAL:
        T = simulate_batch(spec, model, _starts(initial, rng, size), None, rng, max_steps,
                           horizon=tau)
        return (T > tau).astype(float), size
    # conditional delay: resample paths that raise a false alarm by tau
    values = np.empty(size)
    pending = np.arange(size)
    attempts = 0
    while pending.size:
        attempts += pending.size
        T = simulate_batch(spec, model, _starts(initial, rng, pending.size), tau, rng, max_steps)
        ok = T > tau
        values[pending[ok]] = T[ok] - tau
        pending = pending[~ok]
    return values, attempts


def estimate(spec: ProcedureSpec, model: LikelihoodRatioModel, quantity: Quantity,
             replications: int, seed: int, initial: Initial | None = None,
             max_steps: int | None = None, gamma: float | None = None,
             workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> McEstimate:
    """Monte Carlo estimate of ``quantity`` for the chart ``spec``.

    Parameters
    ----------
    initial : float or callable, optional
        Deterministic start (defaults to ``spec.r``) or a sampler
        ``(rng, size) -> starts``; required for the randomized start.
    max_steps : int, optional
        Per-path step cap; defaults to ``100 * gamma`` when ``gamma`` is
        given and to ``DEFAULT_MAX_STEPS`` otherwise.
    workers : int
        Number of processes.  Results do not depend on it.
    """
    if replications < 100:
        raise ValueError("need at least 100 replications")
    initial = _check_initial(spec, initial)
    if max_steps is None:
        max_steps = int(100 * gamma) if gamma is not None else DEFAULT_MAX_STEPS
    n_chunks = math.ceil(replications / chunk_size)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(chunk_size, replications - k * chunk_size) for k in range(n_chunks)]
    jobs = [(spec, model, quantity, initial, children[k], sizes[k], max_steps) for k in range(n_chunks)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        parts = [_chunk(job) for job in jobs]
    values = np.concatenate([p[0] for p in parts]).astype(float)
    attempts = sum(p[1] for p in parts)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size))
    rejection = None
    if quantity.kind is QuantityKind.ADD_AT:
        rejection = 1.0 - replications / attempts
    log.info("MC %s: %.6g +- %.3g (%d reps)", quantity.label, mean, se, replications)
    return McEstimate(mean, se, replications, int(seed), quantity, rejection)
