"""Observation models and the law of the one-step likelihood ratio.

Every detection statistic in this package is driven by the i.i.d. likelihood
ratios ``l_n = f_0(X_n) / f_inf(X_n)``.  The Fredholm machinery only needs
the CDF of ``l_1`` under the pre-change (``Measure.PRE``) and post-change
(``Measure.POST``) laws, so each model exposes closed forms for those, plus
a density (used by the quadrature oracles) and a sampler (used by the Monte
Carlo oracle).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


class Measure(enum.Enum):
    """Index ``i`` of the probability measure ``P_i``."""

    PRE = "inf"   # P_inf: no change ever happens
    POST = "0"    # P_0: change before the first observation

    @classmethod
    def parse(cls, value: "Measure | str | int | float") -> "Measure":
        if isinstance(value, Measure):
            return value
        key = str(value).strip().lower()
        if key in ("inf", "infinity", "pre", "pre_change", "prechange"):
            return cls.PRE
        if key in ("0", "0.0", "post", "post_change", "postchange"):
            return cls.POST
        raise ValueError(f"unknown measure {value!r}")


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class LikelihoodRatioModel:
    """Pre/post-change pair of densities and the induced likelihood ratio.

    Gaussian mean shift: ``N(0, 1) -> N(theta, 1)`` with ``theta != 0``.
    Exponential scale change: ``Exp(mean 1) -> Exp(mean theta)`` with
    ``theta > 0`` and ``theta != 1``.  Only ``theta > 1`` has been checked
    against published values; ``0 < theta < 1`` is supported but untested.
    """

    family: Family
    theta: float

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        theta = float(self.theta)
        object.__setattr__(self, "theta", theta)
        if not np.isfinite(theta):
            raise ValueError("theta must be finite")
        if fam is Family.GAUSSIAN and theta == 0.0:
            raise ValueError("Gaussian model needs theta != 0")
        if fam is Family.EXPONENTIAL and (theta <= 0.0 or theta == 1.0):
            raise ValueError("exponential model needs theta > 0 and theta != 1")

    @classmethod
    def gaussian(cls, theta: float) -> "LikelihoodRatioModel":
        return cls(Family.GAUSSIAN, theta)

    @classmethod
    def exponential(cls, theta: float) -> "LikelihoodRatioModel":
        return cls(Family.EXPONENTIAL, theta)

    @property
    def support(self) -> tuple[float, float]:
        """Closed hull of the support of ``l_1`` (identical under both measures)."""
        if self.family is Family.GAUSSIAN:
            return 0.0, np.inf
        if self.theta > 1.0:
            return 1.0 / self.theta, np.inf
        return 0.0, 1.0 / self.theta

    # -- likelihood ratio as a function of the observation ------------------

    def likelihood_ratio(self, x):
        x = np.asarray(x, dtype=float)
        th = self.theta
        if self.family is Family.GAUSSIAN:
            return np.exp(th * x - 0.5 * th * th)
        return np.exp(x * (1.0 - 1.0 / th)) / th

    def log_likelihood_ratio(self, x):
        x = np.asarray(x, dtype=float)
        th = self.theta
        if self.family is Family.GAUSSIAN:
            return th * x - 0.5 * th * th
        return x * (1.0 - 1.0 / th) - np.log(th)


def lr_cdf(model: LikelihoodRatioModel, i, t):
    """``F_i(t) = P_i[l_1 <= t]``, vectorized over ``t``.

    Negative and zero arguments map to 0.  The result is clipped to [0, 1]
    so that CDF differences built from it never go negative by rounding.
    """
    i = Measure.parse(i)
    t = np.asarray(t, dtype=float)
    th = model.theta
    with np.errstate(divide="ignore", invalid="ignore"):
        # log(0) = -inf propagates to a CDF value of exactly 0
        logt = np.log(np.maximum(t, 0.0))
        if model.family is Family.GAUSSIAN:
            # log l_1 ~ N(-theta^2/2, theta^2) under P_inf, N(+theta^2/2, theta^2) under P_0
            shift = 0.5 * th * th if i is Measure.PRE else -0.5 * th * th
            out = ndtr((logt + shift) / abs(th))
        else:
            # P_i[X <= log(theta t) / a] with a = 1 - 1/theta, X exponential
            rate = 1.0 if i is Measure.PRE else 1.0 / th
            a = 1.0 - 1.0 / th
            u = logt + np.log(th)
            if th > 1.0:
                out = -np.expm1(-rate * np.maximum(u, 0.0) / a)
            else:
                out = np.exp(-rate * np.minimum(u, 0.0) / a)
    out = np.asarray(out, dtype=float)
    np.clip(out, 0.0, 1.0, out=out)
    return out if out.ndim else float(out)


def lr_pdf(model: LikelihoodRatioModel, i, t):
    """Density of ``l_1`` under ``P_i``; zero outside the support."""
    i = Measure.parse(i)
    t = np.asarray(t, dtype=float)
    th = model.theta
    out = np.zeros(t.shape)
    lo, hi = model.support
    inside = (t > lo) & (t < hi) & (t > 0)
    tp = t[inside]
    if model.family is Family.GAUSSIAN:
        s = abs(th)
        shift = 0.5 * th * th if i is Measure.PRE else -0.5 * th * th
        z = (np.log(tp) + shift) / s
        out[inside] = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * s * tp)
    else:
        rate = 1.0 if i is Measure.PRE else 1.0 / th
        a = 1.0 - 1.0 / th
        k = rate / abs(a)
        # F = 1 - (theta t)^(-k) for theta > 1, (theta t)^k for theta < 1
        if th > 1.0:
            out[inside] = k * (th * tp) ** (-k) / tp
        else:
            out[inside] = k * (th * tp) ** k / tp
    return out if out.ndim else float(out)


def sample_observations(model: LikelihoodRatioModel, i, rng: np.random.Generator, size=None):
    """Draw raw observations ``X ~ f_i``."""
    i = Measure.parse(i)
    th = model.theta
    if model.family is Family.GAUSSIAN:
        mean = 0.0 if i is Measure.PRE else th
        return rng.standard_normal(size) + mean
    scale = 1.0 if i is Measure.PRE else th
    return rng.standard_exponential(size) * scale


def sample_lr(model: LikelihoodRatioModel, i, rng: np.random.Generator, size=None):
    """Draw ``l(X)`` with ``X ~ f_i``."""
    return model.likelihood_ratio(sample_observations(model, i, rng, size))
