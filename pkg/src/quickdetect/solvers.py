"""Solvers for the discretized integral equations.

* ``solve_second_kind``: ``u = v + M u`` (fixed-point sweeps or dense LU);
* ``leading_left_eigenpair``: power iteration for ``lambda q^t = q^t N``
  normalized so that the trapezoid integral of ``q`` is one;
* ``iterate_recursion``: the repeated application ``u_tau = M u_{tau-1}``
  that produces the numerator and denominator sequences of the conditional
  detection delay.

Operators may be ``DiscreteOperator`` instances or plain square arrays.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import scipy.linalg as la

from .discretization import DiscreteOperator, Direction

log = logging.getLogger(__name__)


class SolveMethod(enum.Enum):
    AUTO = "auto"
    FIXED_POINT = "fixed-point"
    DIRECT_DENSE = "direct"


@dataclass(frozen=True)
class SolveOptions:
    method: SolveMethod = SolveMethod.AUTO
    rel_tolerance: float = 1e-10
    max_iterations: int = 10**6

    def __post_init__(self):
        object.__setattr__(self, "method", SolveMethod(self.method))
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


class ConvergenceError(RuntimeError):
    """Raised when an iterative method hits its iteration cap."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class SingularSystemError(RuntimeError):
    pass


def _forward_apply(M) -> tuple[Callable[[np.ndarray], np.ndarray], int]:
    if isinstance(M, DiscreteOperator):
        if M.direction is not Direction.FORWARD:
            raise TypeError("expected a forward operator")
        return M.apply, M.size
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("operator must be square")
    return (lambda u: A @ u), A.shape[0]


def _left_apply(N) -> tuple[Callable[[np.ndarray], np.ndarray], int]:
    if isinstance(N, DiscreteOperator):
        if N.direction is not Direction.CONJUGATE:
            raise TypeError("expected a conjugate operator")
        return N.apply_left, N.size
    A = np.asarray(N, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("operator must be square")
    return (lambda u: u @ A), A.shape[0]


def _dense(M) -> np.ndarray | None:
    if isinstance(M, DiscreteOperator):
        return M.matrix
    return np.asarray(M, dtype=float)


def relative_residual(M, u, v) -> float:
    """``||u - v - M u||_inf / ||u||_inf``."""
    apply, _ = _forward_apply(M)
    u = np.asarray(u, dtype=float)
    scale = np.max(np.abs(u))
    res = np.max(np.abs(u - v - apply(u)))
    return float(res / scale) if scale > 0 else float(res)


class SecondKindSolver:
    """Reusable solver for ``u = v + M u`` with a fixed operator.

    With the direct method the LU factors of ``I - M`` are computed once and
    shared by every right-hand side, which is how ``phi_inf`` and ``psi``
    (both driven by ``M_inf``) are obtained from a single factorization.
    """

    def __init__(self, M, opts: SolveOptions | None = None):
        self.M = M
        self.opts = opts or SolveOptions()
        self._apply, self.size = _forward_apply(M)
        method = self.opts.method
        if method is SolveMethod.AUTO:
            method = SolveMethod.DIRECT_DENSE if _dense(M) is not None else SolveMethod.FIXED_POINT
        self.method = method
        self._lu = None
        if method is SolveMethod.DIRECT_DENSE:
            A = _dense(M)
            if A is None:
                raise ValueError("direct solve needs a materialized operator")
            system = np.negative(A)
            system[np.diag_indices_from(system)] += 1.0
            try:
                with np.errstate(all="raise"):
                    self._lu = la.lu_factor(system, overwrite_a=True, check_finite=True)
            except (la.LinAlgError, FloatingPointError, ValueError) as exc:
                raise SingularSystemError(str(exc)) from exc
            if np.any(np.diag(self._lu[0]) == 0):
                raise SingularSystemError("I - M is singular")

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            v = np.full(self.size, float(v))
        if v.shape[0] != self.size:
            raise ValueError(f"right-hand side has length {v.shape[0]}, expected {self.size}")
        if self.method is SolveMethod.DIRECT_DENSE:
            u = la.lu_solve(self._lu, v)
            if not np.all(np.isfinite(u)):
                raise SingularSystemError("non-finite solution")
            return u
        return self._fixed_point(v)

    def _fixed_point(self, v: np.ndarray) -> np.ndarray:
        tol = self.opts.rel_tolerance
        u = v.copy()
        res = prev = np.inf
        for it in range(1, self.opts.max_iterations + 1):
            u_next = v + self._apply(u)
            # u_next - u is exactly the residual v + M u - u of the previous iterate
            scale = np.max(np.abs(u_next))
            res = np.max(np.abs(u_next - u)) / scale if scale > 0 else 0.0
            u = u_next
            # a-posteriori bound ||u* - u|| <= k / (1 - k) ||step|| with the
            # contraction factor k estimated from consecutive steps
            kappa = res / prev if prev > 0 else 0.0
            prev = res
            if res == 0.0 or (res <= tol and kappa < 1.0 and res * kappa / (1.0 - kappa) <= tol):
                log.debug("fixed point converged in %d sweeps", it)
                return u
        raise ConvergenceError("fixed-point iteration did not converge", self.opts.max_iterations, res)


def solve_second_kind(M, v, opts: SolveOptions | None = None) -> np.ndarray:
    """Solve ``u = v + M u``; see :class:`SecondKindSolver`."""
    return SecondKindSolver(M, opts).solve(v)


@dataclass(frozen=True)
class EigenResult:
    lambda_max: float
    q: np.ndarray
    iterations: int
    residual: float


def leading_left_eigenpair(N_op, weights, opts: SolveOptions | None = None,
                           start=None) -> EigenResult:
    """Leading left eigenpair ``lambda q^t = q^t N`` by power iteration.

    ``q`` is kept normalized so that ``sum(weights * q) == 1``; the default
    start vector is the normalized weight vector itself, which is strictly
    positive and therefore overlaps the nonnegative Perron vector.
    ``residual`` is ``||q^t N - lambda q^t||_inf / ||q||_inf``.
    """
    opts = opts or SolveOptions()
    apply_left, n = _left_apply(N_op)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights do not match the operator size")
    q = w.copy() if start is None else np.array(start, dtype=float)
    if q.shape != (n,) or np.any(q < 0) or not np.dot(w, q) > 0:
        raise ValueError("start vector must be nonnegative with positive mass")
    q /= np.dot(w, q)
    lam = np.nan
    tol = opts.rel_tolerance
    for it in range(1, opts.max_iterations + 1):
        qn = apply_left(q)
        mass = float(np.dot(w, qn))
        if not mass > 0:
            # the chain leaves the domain in one step from everywhere
            return EigenResult(0.0, q, it, float(np.max(np.abs(qn))))
        q_next = qn / mass
        dq = np.max(np.abs(q_next - q)) / np.max(np.abs(q_next))
        dlam = abs(mass - lam) / mass if np.isfinite(lam) else np.inf
        q, lam = q_next, mass
        if dlam < tol and dq < tol:
            break
    else:
        raise ConvergenceError("power iteration did not converge", opts.max_iterations, float(dq))
    np.maximum(q, 0.0, out=q)
    q /= np.dot(w, q)
    residual = float(np.max(np.abs(apply_left(q) - lam * q)) / np.max(np.abs(q)))
    return EigenResult(float(lam), q, it, residual)


def iterate_recursion(M, u0, tau_max: int,
                      early_stop: Callable[[int, np.ndarray], bool] | None = None
                      ) -> Iterator[np.ndarray]:
    """Yield ``u_tau = M u_{tau-1}`` for ``tau = 1, ..., tau_max``.

    ``u0`` may be a matrix whose columns are advanced together.  Iteration
    ends after the iterate at which ``early_stop(tau, u_tau)`` returns True.
    """
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    apply, _ = _forward_apply(M)
    u = np.asarray(u0, dtype=float)
    for tau in range(1, tau_max + 1):
        u = apply(u)
        yield u
        if early_stop is not None and early_stop(tau, u):
            return
