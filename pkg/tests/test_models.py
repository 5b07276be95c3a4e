import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from quickdetect.models import (
    Family,
    LikelihoodRatioModel,
    Measure,
    lr_cdf,
    lr_pdf,
    sample_lr,
    sample_observations,
)


def _observation_density(model, measure):
    th = model.theta
    if model.family is Family.GAUSSIAN:
        loc = 0.0 if measure is Measure.PRE else th
        return lambda x: stats.norm.pdf(x, loc=loc)
    scale = 1.0 if measure is Measure.PRE else th
    return lambda x: np.exp(-x / scale) / scale


def set_integration_cdf(model, measure, t):
    """Oracle: integrate the observation density over ``{x : l(x) <= t}``.

    For both families ``l`` is monotone in ``x`` on the support, so the set
    is a half line whose end point is located by root finding on ``l(x) - t``.
    """
    dens = _observation_density(model, measure)
    f = lambda x: model.log_likelihood_ratio(x) - np.log(t)
    if model.family is Family.GAUSSIAN:
        edge = optimize.brentq(f, -1e4, 1e4, xtol=1e-14, rtol=1e-15)
        if model.theta > 0:
            return integrate.quad(dens, -np.inf, edge, epsabs=1e-14, epsrel=1e-13)[0]
        return integrate.quad(dens, edge, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    if f(0.0) > 0:
        return 0.0
    edge = optimize.brentq(f, 0.0, 1e5, xtol=1e-14, rtol=1e-15)
    return integrate.quad(dens, 0.0, edge, epsabs=1e-14, epsrel=1e-13)[0]


MODELS = [LikelihoodRatioModel.gaussian(0.1), LikelihoodRatioModel.gaussian(-0.7),
          LikelihoodRatioModel.gaussian(1.0), LikelihoodRatioModel.exponential(1.1),
          LikelihoodRatioModel.exponential(3.0)]


class TestConstruction:
    def test_rejects_degenerate_parameters(self):
        with pytest.raises(ValueError):
            LikelihoodRatioModel.gaussian(0.0)
        with pytest.raises(ValueError):
            LikelihoodRatioModel.exponential(1.0)
        with pytest.raises(ValueError):
            LikelihoodRatioModel.exponential(-2.0)
        with pytest.raises(ValueError):
            LikelihoodRatioModel.gaussian(np.inf)

    def test_measure_parsing(self):
        assert Measure.parse("inf") is Measure.PRE
        assert Measure.parse(0) is Measure.POST
        assert Measure.parse(np.inf) is Measure.PRE
        with pytest.raises(ValueError):
            Measure.parse("sometimes")

    def test_support(self):
        assert LikelihoodRatioModel.gaussian(0.3).support == (0.0, np.inf)
        lo, hi = LikelihoodRatioModel.exponential(1.1).support
        assert lo == pytest.approx(1 / 1.1) and hi == np.inf


class TestCdf:
    def test_reference_values(self, gauss01, expo11):
        assert lr_cdf(gauss01, Measure.PRE, 1.0) == pytest.approx(0.5199, abs=5e-5)
        assert lr_cdf(expo11, Measure.PRE, 1.0) == pytest.approx(0.6495, abs=5e-5)

    @pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.family.value}-{m.theta}")
    @pytest.mark.parametrize("measure", [Measure.PRE, Measure.POST])
    def test_matches_set_integration_oracle(self, model, measure):
        lo = max(model.support[0], 1e-3)
        ts = np.geomspace(lo * 0.5, lo * 20 + 5.0, 50)
        closed = lr_cdf(model, measure, ts)
        oracle = np.array([set_integration_cdf(model, measure, t) for t in ts])
        np.testing.assert_allclose(closed, oracle, rtol=0, atol=1e-10)

    def test_nonpositive_arguments(self, gauss01):
        np.testing.assert_array_equal(lr_cdf(gauss01, "inf", [-1.0, 0.0]), [0.0, 0.0])

    def test_exponential_flat_below_support(self, expo11):
        ts = np.linspace(0.0, 1 / 1.1, 20, endpoint=False)
        assert np.all(lr_cdf(expo11, "inf", ts) == 0.0)
        assert np.all(lr_cdf(expo11, 0, ts) == 0.0)

    @settings(max_examples=60, deadline=None)
    @given(theta=st.floats(0.05, 2.0), t1=st.floats(1e-3, 50.0), t2=st.floats(1e-3, 50.0),
           gaussian=st.booleans())
    def test_monotone_and_post_change_dominates(self, theta, t1, t2, gaussian):
        model = (LikelihoodRatioModel.gaussian(theta) if gaussian
                 else LikelihoodRatioModel.exponential(1.0 + theta))
        lo, hi = sorted((t1, t2))
        for m in (Measure.PRE, Measure.POST):
            a, b = lr_cdf(model, m, lo), lr_cdf(model, m, hi)
            assert 0.0 <= a <= b <= 1.0
        # the likelihood ratio is stochastically larger after the change
        assert lr_cdf(model, Measure.POST, lo) <= lr_cdf(model, Measure.PRE, lo) + 1e-15


class TestPdf:
    def test_exponential_zero_below_support(self, expo11):
        assert np.all(lr_pdf(expo11, "inf", np.linspace(0.0, 0.9, 10)) == 0.0)

    @pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.family.value}-{m.theta}")
    @pytest.mark.parametrize("measure", [Measure.PRE, Measure.POST])
    def test_integrates_to_one(self, model, measure):
        lo = model.support[0]
        f = lambda t: lr_pdf(model, measure, t)
        # split at t = 1 where the log-normal mass concentrates for small theta
        total = sum(integrate.quad(f, a, b, limit=500, epsabs=1e-12, epsrel=1e-12)[0]
                    for a, b in [(lo, 1.0), (1.0, np.inf)] if b > a)
        assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.family.value}-{m.theta}")
    def test_matches_cdf_finite_difference(self, model):
        h = 1e-6
        ts = np.array([1.0, 1.3, 2.0]) if model.family is Family.EXPONENTIAL else np.array([0.8, 1.0, 1.2])
        fd = (lr_cdf(model, "inf", ts + h) - lr_cdf(model, "inf", ts - h)) / (2 * h)
        np.testing.assert_allclose(lr_pdf(model, "inf", ts), fd, rtol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(theta=st.floats(0.05, 2.0), t=st.floats(1e-2, 30.0), gaussian=st.booleans())
    def test_change_of_measure(self, theta, t, gaussian):
        # dP_0 / dP_inf = l, so the post-change density is t times the pre-change one
        model = (LikelihoodRatioModel.gaussian(theta) if gaussian
                 else LikelihoodRatioModel.exponential(1.0 + theta))
        pre, post = lr_pdf(model, Measure.PRE, t), lr_pdf(model, Measure.POST, t)
        assert post == pytest.approx(t * pre, rel=1e-10, abs=1e-300)


class TestMoments:
    @pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.family.value}-{m.theta}")
    def test_likelihood_ratio_means(self, model):
        lo = model.support[0]
        pieces = [(lo, 1.0), (1.0, np.inf)]
        e_inf = sum(integrate.quad(lambda t: t * lr_pdf(model, "inf", t), a, b, limit=500)[0]
                    for a, b in pieces if b > a)
        e0_inv = sum(integrate.quad(lambda t: lr_pdf(model, 0, t) / t, a, b, limit=500)[0]
                     for a, b in pieces if b > a)
        assert e_inf == pytest.approx(1.0, abs=1e-8)
        assert e0_inv == pytest.approx(1.0, abs=1e-8)


class TestSampling:
    @pytest.mark.parametrize("model", [LikelihoodRatioModel.gaussian(0.1),
                                       LikelihoodRatioModel.exponential(1.1)],
                             ids=["gaussian", "exponential"])
    @pytest.mark.parametrize("measure", [Measure.PRE, Measure.POST])
    def test_kolmogorov_smirnov(self, model, measure):
        rng = np.random.default_rng(2024)
        draws = sample_lr(model, measure, rng, 10**6)
        d = stats.kstest(draws, lambda t: lr_cdf(model, measure, t)).statistic
        assert d < 0.002

    def test_observation_means(self, gauss01, expo11):
        rng = np.random.default_rng(7)
        assert sample_observations(gauss01, 0, rng, 200_000).mean() == pytest.approx(0.1, abs=0.01)
        assert sample_observations(expo11, 0, rng, 200_000).mean() == pytest.approx(1.1, rel=0.01)

    def test_reproducible(self, gauss01):
        a = sample_lr(gauss01, "inf", np.random.default_rng(3), 10)
        b = sample_lr(gauss01, "inf", np.random.default_rng(3), 10)
        np.testing.assert_array_equal(a, b)
