import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from quickdetect.discretization import DriftMap, build_conjugate_operator, build_forward_operator, build_grid
from quickdetect.models import Measure, lr_cdf
from quickdetect.solvers import (
    ConvergenceError,
    SecondKindSolver,
    SolveMethod,
    SolveOptions,
    iterate_recursion,
    leading_left_eigenpair,
    relative_residual,
    solve_second_kind,
)

FIXED = SolveOptions(method=SolveMethod.FIXED_POINT)
DIRECT = SolveOptions(method=SolveMethod.DIRECT_DENSE)


class TestSecondKind:
    @pytest.mark.parametrize("opts", [FIXED, DIRECT], ids=["fixed-point", "direct"])
    def test_zero_operator(self, opts):
        np.testing.assert_array_equal(solve_second_kind(np.zeros((3, 3)), np.ones(3), opts), np.ones(3))

    @pytest.mark.parametrize("opts", [FIXED, DIRECT], ids=["fixed-point", "direct"])
    def test_diagonal(self, opts):
        u = solve_second_kind(np.diag([0.5, 0.5]), [1.0, 1.0], opts)
        np.testing.assert_allclose(u, [2.0, 2.0], rtol=1e-9)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolveOptions(rel_tolerance=0)
        with pytest.raises(ValueError):
            SolveOptions(max_iterations=0)
        assert SolveOptions(method="direct").method is SolveMethod.DIRECT_DENSE

    def test_iteration_cap(self):
        with pytest.raises(ConvergenceError) as info:
            solve_second_kind(np.diag([0.999, 0.999]), np.ones(2), SolveOptions("fixed-point", max_iterations=5))
        assert info.value.iterations == 5 and info.value.residual > 0

    def test_direct_needs_matrix(self, gauss05):
        g = build_grid(0, 5, 50)
        M = build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr(), dense=False)
        with pytest.raises(ValueError):
            SecondKindSolver(M, DIRECT)
        assert SecondKindSolver(M).method is SolveMethod.FIXED_POINT

    @pytest.mark.parametrize("nu,n", [(20.0, 400), (150.0, 1000), (300.0, 2000)])
    def test_fixed_point_agrees_with_direct(self, gauss05, gauss01, nu, n):
        model = gauss05 if nu == 20.0 else gauss01
        g = build_grid(0, nu, n)
        M = build_forward_operator(model, Measure.PRE, g, DriftMap.sr())
        ones = np.ones(g.size)
        a = solve_second_kind(M, ones, FIXED)
        b = solve_second_kind(M, ones, DIRECT)
        assert np.max(np.abs(a - b) / np.abs(b)) <= 1e-8
        for u in (a, b):
            assert relative_residual(M, u, ones) <= 1e-10

    def test_shared_factorization(self, gauss05):
        g = build_grid(0, 20, 300)
        M = build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr())
        solver = SecondKindSolver(M, DIRECT)
        phi = solver.solve(1.0)
        psi = solver.solve(phi)
        assert relative_residual(M, psi, phi) <= 1e-12
        with pytest.raises(ValueError):
            solver.solve(np.ones(5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 30), st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
    def test_random_substochastic_systems(self, n, rho, seed):
        rng = np.random.default_rng(seed)
        A = rng.random((n, n))
        A *= rho / A.sum(axis=1, keepdims=True)
        v = rng.random(n) + 0.1
        a = solve_second_kind(A, v, FIXED)
        b = solve_second_kind(A, v, DIRECT)
        np.testing.assert_allclose(a, b, rtol=1e-8)
        assert np.all(b >= v)


class TestEigenpair:
    def test_scalar(self):
        res = leading_left_eigenpair(np.array([[0.3]]), np.array([1.0]))
        assert res.lambda_max == pytest.approx(0.3)
        assert res.q[0] == pytest.approx(1.0)

    def test_coarse_instance_matches_dense_eigensolve(self, gauss05):
        g = build_grid(0, 20, 400)
        N = build_conjugate_operator(gauss05, g, DriftMap.sr())
        res = leading_left_eigenpair(N, g.weights)
        vals, left = la.eig(N.matrix, left=True, right=False)
        k = np.argmax(vals.real)
        assert abs(res.lambda_max - vals[k].real) <= 1e-8
        q = np.abs(left[:, k].real)
        q /= np.dot(g.weights, q)
        np.testing.assert_allclose(res.q, q, atol=1e-6 * q.max())
        assert np.all(res.q >= 0)
        assert abs(np.dot(g.weights, res.q) - 1.0) <= 1e-12
        assert res.residual <= 1e-8

    def test_matrix_free(self, gauss05):
        g = build_grid(0, 20, 300)
        dense = leading_left_eigenpair(build_conjugate_operator(gauss05, g, DriftMap.sr()), g.weights)
        lazy = leading_left_eigenpair(build_conjugate_operator(gauss05, g, DriftMap.sr(), dense=False),
                                      g.weights)
        assert lazy.lambda_max == pytest.approx(dense.lambda_max, abs=1e-12)

    def test_start_vector_validation(self):
        with pytest.raises(ValueError):
            leading_left_eigenpair(np.eye(2) * 0.5, np.ones(2), start=[-1.0, 1.0])
        with pytest.raises(ValueError):
            leading_left_eigenpair(np.eye(2) * 0.5, np.ones(3))

    def test_forward_operator_rejected(self, gauss05):
        g = build_grid(0, 5, 20)
        with pytest.raises(TypeError):
            leading_left_eigenpair(build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr()), g.weights)

    def test_nonconvergence(self, gauss05):
        g = build_grid(0, 20, 100)
        N = build_conjugate_operator(gauss05, g, DriftMap.sr())
        with pytest.raises(ConvergenceError):
            leading_left_eigenpair(N, g.weights, SolveOptions(max_iterations=2))


class TestRecursion:
    def test_first_iterate_is_cdf(self, gauss01):
        g = build_grid(0, 100, 500)
        M = build_forward_operator(gauss01, Measure.PRE, g, DriftMap.sr())
        u1 = next(iterate_recursion(M, np.ones(g.size), 3))
        np.testing.assert_allclose(u1, lr_cdf(gauss01, "inf", 100 / (1 + g.nodes)), atol=1e-12)

    def test_zero_stays_zero(self, gauss05):
        g = build_grid(0, 20, 100)
        M = build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr())
        assert all(np.all(u == 0) for u in iterate_recursion(M, np.zeros(g.size), 10))

    def test_survival_nonnegative_and_nonincreasing(self, gauss05):
        g = build_grid(0, 20, 200)
        M = build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr())
        prev = np.ones(g.size)
        for u in iterate_recursion(M, prev, 50):
            assert np.all(u >= 0) and np.all(u <= prev + 1e-15)
            prev = u

    def test_early_stop_and_bounds(self):
        M = np.eye(2) * 0.5
        seen = list(iterate_recursion(M, np.ones(2), 10, early_stop=lambda tau, u: tau == 3))
        assert len(seen) == 3
        assert list(iterate_recursion(M, np.ones(2), 0)) == []
        with pytest.raises(ValueError):
            list(iterate_recursion(M, np.ones(2), -1))

    def test_geometric_decay_rate(self, gauss05):
        g = build_grid(0, 20, 400)
        M = build_forward_operator(gauss05, Measure.PRE, g, DriftMap.sr())
        lam = leading_left_eigenpair(build_conjugate_operator(gauss05, g, DriftMap.sr()), g.weights).lambda_max
        norms = [np.max(u) for u in iterate_recursion(M, np.ones(g.size), 800)]
        taus = np.arange(1, 801)
        sel = (taus >= 200) & (taus <= 800)
        slope = np.polyfit(taus[sel], np.log(np.array(norms)[sel]), 1)[0]
        assert slope == pytest.approx(np.log(lam), rel=0.02)
