import math
import itertools

import numpy as np
import pytest

from conftest import bin_latent, binary_logistic_problem, grid_mle_2d, interval_instance, irls_logistic, \
    kkt_violation, lasso_problem, penalty, random_instance
from finreg.cv import lambda_max
from finreg.design import PenaltySpec, build_cumulative, build_interval_regression
from finreg.errors import InfeasibleError
from finreg.objective import neg_loglik_grad, neg_loglik_hess, penalized_obj
from finreg.prox_newton import CDState, FitResult, QuadModel, SolverOptions, _inner, cd_coordinate_update, \
    fit, inner_cd_solve, j_residual, jq_residual, line_search, soft_threshold


def synthetic_quad(A, v, pen, theta_k=None):
    """Quadratic ``v'(t - t_k) + 1/2 (t - t_k)'A(t - t_k) + l1`` with constant curvature ``A``."""
    A = np.atleast_2d(np.asarray(A, float))
    d = A.shape[0]
    L = np.linalg.cholesky(A)
    q = QuadModel.__new__(QuadModel)
    q.pen = pen
    q.theta_k = np.zeros(d) if theta_k is None else np.asarray(theta_k, float)
    q.v = np.asarray(v, float)
    q.za = np.asfortranarray(L.T)
    q.zb = np.zeros((d, d), order="F")
    q.w11, q.w12, q.w22 = np.ones(d), np.zeros(d), np.zeros(d)
    q.mu = np.zeros(d)
    q.diag = np.diag(A) + pen.lambda2
    return q


def pen_d(d, lambda1=0.0, lambda2=0.0, lb=None):
    return PenaltySpec(lambda1, lambda2, np.ones(d), np.full(d, -np.inf) if lb is None else lb)


def composite_min_d2(A, v, lam):
    """Exact minimizer of v't + t'At/2 + lam|t|_1 at d=2 by enumerating sign patterns."""
    best, arg = np.inf, None
    for signs in itertools.product((-1, 0, 1), repeat=2):
        s = np.array(signs, float)
        free = s != 0
        t = np.zeros(2)
        if free.any():
            t[free] = np.linalg.solve(A[np.ix_(free, free)], -(v[free] + lam * s[free]))
            if np.any(np.sign(t[free]) != s[free]):
                continue
        f = v @ t + 0.5 * t @ A @ t + lam * np.abs(t).sum()
        if f < best:
            best, arg = f, t
    return arg


def dense_curvature(quad):
    d = quad.theta_k.size
    cols = [quad.apply(quad.za[:, j], quad.zb[:, j], np.eye(d)[j]) for j in range(d)]
    return np.column_stack(cols)


class TestSoftThreshold:
    @pytest.mark.parametrize("x,lam,out", [(3, 1, 2), (-0.5, 1, 0), (-3, 1.5, -1.5), (0, 0, 0)])
    def test_values(self, x, lam, out):
        assert soft_threshold(x, lam) == out

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)


class TestCoordinateUpdate:
    def test_scalar_closed_form(self):
        state = CDState.start(synthetic_quad([[2.0]], [-3.0], pen_d(1, lambda1=1.0)))
        assert cd_coordinate_update(state, 0) == pytest.approx(1.0, abs=1e-15)

    def test_scalar_thresholded(self):
        state = CDState.start(synthetic_quad([[2.0]], [-3.0], pen_d(1, lambda1=4.0)))
        assert cd_coordinate_update(state, 0) == 0.0

    def test_random_against_grid(self):
        rng = np.random.default_rng(0)
        grid = np.arange(-10.0, 10.0 + 5e-5, 1e-4)
        for _ in range(200):
            # minimizer stays within |theta| <= 3 + 3/0.5 < 10, inside the grid
            a = rng.uniform(0.5, 5.0)
            lam1, lam2 = rng.uniform(0, 2.0), rng.choice([0.0, rng.uniform(0, 1.0)])
            tk = rng.uniform(-3, 3)
            v = rng.uniform(-3, 3)
            lb = rng.choice([0.0, -np.inf])
            pen = pen_d(1, lam1, lam2, np.array([lb]))
            # start from a coordinate value different from theta_k
            state = CDState.start(synthetic_quad([[a]], [v], pen, [tk]), [tk + rng.uniform(-1, 1)])
            got = cd_coordinate_update(state, 0)
            f = v * (grid - tk) + 0.5 * (a + lam2) * (grid - tk) ** 2 + lam1 * np.abs(grid)
            f = np.where(grid < lb, np.inf, f)
            assert abs(got - grid[np.argmin(f)]) <= 1e-4 + 1e-12

    def test_python_and_compiled_sweeps_agree(self):
        rng = np.random.default_rng(1)
        model = lasso_problem(rng, d=8)
        pen = penalty(model, 0.02, 0.1)
        quad = QuadModel(model, rng.normal(scale=0.1, size=8), pen)
        s1 = CDState.start(quad)
        s2 = CDState.start(quad)
        from finreg.prox_newton import _sweep
        for _ in range(5):
            for j in range(8):
                cd_coordinate_update(s1, j)
            _sweep(s2)
        np.testing.assert_allclose(s1.theta, s2.theta, rtol=1e-13, atol=1e-15)


class TestResiduals:
    def test_unpenalized_residual_is_gradient(self):
        rng = np.random.default_rng(2)
        model, theta = interval_instance(rng, "logistic")
        pen = penalty(model, 0.0, 0.7)
        expected = neg_loglik_grad(model, theta) + 0.7 * theta
        for c1 in (0.1, 1.0, 10.0):
            np.testing.assert_allclose(j_residual(model, theta, pen, c1), expected, rtol=1e-12, atol=1e-15)

    def test_zero_is_stationary_under_large_lambda(self):
        rng = np.random.default_rng(3)
        model = lasso_problem(rng)
        lam = np.abs(neg_loglik_grad(model, np.zeros(model.d))).max()
        assert not j_residual(model, np.zeros(model.d), penalty(model, lam * 1.0001)).any()

    def test_jq_at_theta_k(self):
        rng = np.random.default_rng(4)
        model, theta = random_instance(rng, kind="interval_unknown")
        pen = penalty(model, 0.05, 0.2)
        np.testing.assert_allclose(jq_residual(model, theta, theta, pen), j_residual(model, theta, pen),
                                   rtol=1e-13, atol=1e-15)

    def test_jq_ridge_is_linear(self):
        rng = np.random.default_rng(5)
        model, theta_k = interval_instance(rng, "gaussian")
        pen = penalty(model, 0.0, 0.5)
        theta = theta_k + rng.normal(scale=0.1, size=theta_k.size)
        expected = (neg_loglik_grad(model, theta_k) + 0.5 * theta_k
                    + (neg_loglik_hess(model, theta_k) + 0.5 * np.eye(model.d)) @ (theta - theta_k))
        np.testing.assert_allclose(jq_residual(model, theta, theta_k, pen), expected, rtol=1e-10, atol=1e-13)

    def test_exact_subproblem_has_zero_jq(self):
        rng = np.random.default_rng(6)
        model = lasso_problem(rng, d=6)
        pen = penalty(model, 0.03)
        theta_k = np.zeros(model.d)
        sol = inner_cd_solve(model, theta_k, pen, SolverOptions(c2=0.0, max_inner=100000))
        assert np.linalg.norm(jq_residual(model, sol, theta_k, pen)) <= 1e-10


class TestInnerSolve:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        model, theta_k = interval_instance(rng, "extreme_value", p=3)
        pen = PenaltySpec(0.02, 0.0, np.ones(3), np.full(3, -np.inf))
        quad = QuadModel(model, theta_k, pen)
        A = dense_curvature(quad)
        # long proximal-gradient run on the same composite quadratic
        L = np.linalg.eigvalsh(A).max()
        x = theta_k.copy()
        for _ in range(200000):
            y = x - (quad.v + A @ (x - theta_k)) / L
            x = np.sign(y) * np.maximum(np.abs(y) - 0.02 / L, 0.0)
        got = inner_cd_solve(model, theta_k, pen, SolverOptions(c2=0.0, max_inner=100000))
        np.testing.assert_allclose(got, x, atol=1e-8)

    def test_stationary_start_returns_theta_k(self):
        rng = np.random.default_rng(8)
        model = lasso_problem(rng)
        res = fit(model, penalty(model, 0.05))
        out = inner_cd_solve(model, res.theta_hat, penalty(model, 0.05), SolverOptions(c2=0.25))
        np.testing.assert_allclose(out, res.theta_hat, atol=1e-9)

    def test_constant_hessian_quadratic_solved_exactly(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            B = rng.normal(size=(2, 2))
            A = B @ B.T + 0.1 * np.eye(2)
            v = rng.normal(size=2)
            lam = rng.uniform(0, 1)
            res = _inner(synthetic_quad(A, v, pen_d(2, lam)), 0.0, SolverOptions(max_inner=100000))
            np.testing.assert_allclose(res.theta, composite_min_d2(A, v, lam), atol=1e-10)

    def test_ridge_fallback_when_curvature_vanishes(self):
        rng = np.random.default_rng(10)
        # a column of zeros gives a zero curvature diagonal
        X = np.c_[rng.normal(size=(30, 2)), np.zeros(30)]
        lo, hi = bin_latent(X[:, 0] + rng.normal(size=30), np.arange(-2.0, 2.5, 1.0))
        model = build_interval_regression(X, lo, hi)
        quad = QuadModel(model, np.zeros(3), penalty(model))
        assert quad.mu[2] > 0 and quad.mu[0] == 0
        res = fit(model, penalty(model, 0.01))
        assert res.converged and res.theta_hat[2] == 0.0


class TestLineSearch:
    def test_candidate_equal_to_theta_k(self):
        rng = np.random.default_rng(11)
        model, theta = random_instance(rng, kind="interval")
        assert line_search(model, theta, theta.copy(), penalty(model, 0.1)) == (1.0, False)

    def test_quadratic_accepts_unit_step(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(50, 2))
        y = X @ [1.0, -1.0] + rng.normal(size=50)
        # very narrow intervals make the gaussian likelihood quadratic to
        # within rounding of the interval width
        lo = np.round(y, 3)
        model = build_interval_regression(X, lo, lo + 1e-3)
        pen = penalty(model, 0.05)
        theta_k = np.zeros(2)
        cand = inner_cd_solve(model, theta_k, pen, SolverOptions(c2=0.0))
        for c3 in (1e-4, 0.1, 0.3, 0.49):
            assert line_search(model, theta_k, cand, pen, SolverOptions(c3=c3))[0] == 1.0

    def test_rejects_infeasible_trial(self):
        m = build_cumulative([1, 2, 3, 2, 1, 3], n_categories=3)
        theta_k = np.array([0.0, 1.0])
        s, stalled = line_search(m, theta_k, np.array([3.0, 1.0]), penalty(m))
        assert not stalled and 0 < s <= 0.5
        assert math.isfinite(penalized_obj(m, theta_k + s * np.array([3.0, 0.0]), penalty(m)))


class TestFit:
    def test_logistic_matches_irls(self):
        model, X, y = binary_logistic_problem()
        res = fit(model, penalty(model))
        assert res.converged
        np.testing.assert_allclose(res.theta_hat, irls_logistic(X, y), atol=1e-6)

    def test_lambda_max_zeroes_everything(self):
        rng = np.random.default_rng(14)
        model, _ = interval_instance(rng, "gaussian", scale="unknown", p=4, n=80)
        pen = penalty(model)
        lam, theta_r = lambda_max(model, pen)
        res = fit(model, pen.with_lambdas(lambda1=lam))
        assert res.converged
        assert np.all(res.theta_hat[pen.l1_weight > 0] == 0.0)

    def test_two_parameter_grid_search(self):
        rng = np.random.default_rng(15)
        X = np.c_[np.ones(150), rng.normal(size=150)]
        y = X @ [0.4, 0.9] + rng.normal(size=150)
        lo, hi = bin_latent(y, np.arange(-3.0, 3.5, 0.5))
        model = build_interval_regression(X, lo, hi)
        res = fit(model, penalty(model))
        ref = grid_mle_2d(model, res.theta_hat.round(1))
        np.testing.assert_allclose(res.theta_hat, ref, atol=2e-4)

    def test_monotone_and_kkt_across_problems(self):
        rng = np.random.default_rng(16)
        for i in range(15):
            model, _ = random_instance(rng)
            pen = penalty(model, rng.uniform(0, 0.05), rng.choice([0.0, 0.1]))
            res = fit(model, pen)
            assert res.converged, res.message
            assert np.all(np.diff(res.history) <= 0)
            assert res.j_norm <= 1e-8
            assert kkt_violation(neg_loglik_grad(model, res.theta_hat), res.theta_hat, pen) <= 1e-7
            assert np.all(res.theta_hat >= pen.lower_bound)

    def test_c1_invariance_of_solution(self):
        rng = np.random.default_rng(17)
        model = lasso_problem(rng)
        pen = penalty(model, 0.03)
        res = fit(model, pen, SolverOptions(tol=1e-12))
        for c1 in (0.01, 1.0, 100.0):
            assert np.abs(j_residual(model, res.theta_hat, pen, c1)).max() <= 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(18)
        model = lasso_problem(rng, d=30)
        a = fit(model, penalty(model, 0.01))
        b = fit(model, penalty(model, 0.01))
        assert a.theta_hat.tobytes() == b.theta_hat.tobytes()
        assert a.history == b.history

    def test_infeasible_start(self):
        m = build_cumulative([1, 2, 3], n_categories=3)
        with pytest.raises(InfeasibleError):
            fit(m, theta0=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            fit(m, theta0=np.zeros(5))

    def test_iteration_cap_reported(self):
        rng = np.random.default_rng(19)
        model, _ = interval_instance(rng, "logistic")
        res = fit(model, penalty(model), SolverOptions(max_outer=1))
        assert not res.converged and "max_outer" in res.message
        assert res.j_norm > 1e-8

    def test_options_validation(self):
        for bad in (dict(c3=0.5), dict(c2=1.0), dict(shrink=1.0), dict(c1=0.0), dict(tol=0.0)):
            with pytest.raises(ValueError):
                SolverOptions(**bad)

    def test_result_round_trip(self):
        rng = np.random.default_rng(20)
        model, _ = interval_instance(rng, "gaussian")
        res = fit(model, penalty(model))
        back = FitResult.from_dict(res.to_dict())
        assert back.theta_hat.tobytes() == res.theta_hat.tobytes()
        assert back.loglik == res.loglik

    def test_unknown_scale_stays_positive(self):
        rng = np.random.default_rng(21)
        model, _ = interval_instance(rng, "gaussian", scale="unknown", width=2.0)
        res = fit(model, penalty(model, 0.05))
        assert res.converged and res.theta_hat[0] > 0
