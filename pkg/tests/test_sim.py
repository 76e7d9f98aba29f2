import csv
import json
import math

import numpy as np
import pytest

from finreg.sim import HIGHDIM, LOWDIM, SimConfig, ar_covariance, bin_edges, gamma_glm_irls, gen_intervals, \
    gen_predictors, lasso_cd, representatives, run_experiment, run_sweep, true_theta, write_reports


class TestPredictors:
    def test_covariance_entry(self):
        assert ar_covariance(3)[0, 2] == 0.25
        X = gen_predictors(200_000, 3, 0)
        # sampling error of a correlation at this n is about 0.002
        assert np.corrcoef(X.T)[0, 2] == pytest.approx(0.25, abs=0.01)

    def test_centered_and_scaled(self):
        X = gen_predictors(57, 6, 1)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(X.var(axis=0, ddof=1), 1.0, atol=1e-10)

    def test_intercept_column(self):
        X = gen_predictors(40, 3, 2, intercept=True)
        assert X.shape == (40, 3)
        np.testing.assert_array_equal(X[:, 0], 1.0)
        np.testing.assert_allclose(X[:, 1:].mean(axis=0), 0.0, atol=1e-10)

    def test_deterministic(self):
        np.testing.assert_array_equal(gen_predictors(30, 4, 9), gen_predictors(30, 4, 9))

    def test_bad_p(self):
        with pytest.raises(ValueError):
            gen_predictors(10, 0, 0)


class TestIntervals:
    def test_true_theta(self):
        np.testing.assert_array_equal(true_theta(LOWDIM, 3), [1.0, 0.5, -0.5])
        t = true_theta(HIGHDIM, 10)
        np.testing.assert_array_equal(t[:3], [1.0, 0.5, -0.5])
        assert not t[3:].any()

    def test_size_five_gives_two_bins(self):
        np.testing.assert_array_equal(bin_edges(LOWDIM, 5.0), [0.0, 5.0, np.inf])

    @pytest.mark.parametrize("size,k", [(0.5, 9), (1.0, 4), (2.0, 2), (1.5, 3), (7.0, 0)])
    def test_lowdim_grid(self, size, k):
        # k is the largest integer with k * size < 5
        e = bin_edges(LOWDIM, size)
        np.testing.assert_allclose(e, np.r_[np.arange(k + 1) * size, 5.0, np.inf])

    def test_highdim_grid_symmetric(self):
        e = bin_edges(HIGHDIM, 2.0)
        np.testing.assert_array_equal(e, [-np.inf, -5.0, -4.0, -2.0, 0.0, 2.0, 4.0, 5.0, np.inf])
        fin = e[np.isfinite(e)]
        np.testing.assert_array_equal(fin, -fin[::-1])

    @pytest.mark.parametrize("setting", [LOWDIM, HIGHDIM])
    def test_latent_inside_interval(self, setting):
        p = 3 if setting == LOWDIM else 8
        X = gen_predictors(500, p, 3, intercept=setting == LOWDIM)
        lo, hi, latent = gen_intervals(setting, X, true_theta(setting, p), 1.0, 4, return_latent=True)
        assert np.all((lo <= latent) & (latent < hi))
        edges = bin_edges(setting, 1.0)
        assert set(lo) <= set(edges) and set(hi) <= set(edges)

    def test_extreme_value_errors(self):
        # log of exp(Y*) - x'theta should follow the standard minimum extreme value law
        X = np.ones((100_000, 1))
        _, _, latent = gen_intervals(LOWDIM, X, [0.3], 1.0, 5, return_latent=True)
        w = np.log(latent) - 0.3
        assert np.mean(w) == pytest.approx(-np.euler_gamma, abs=0.02)
        assert np.var(w) == pytest.approx(math.pi ** 2 / 6, abs=0.03)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gen_intervals(LOWDIM, np.ones((3, 2)), [1.0], 1.0, 0)

    def test_representatives(self):
        lo = np.array([-np.inf, -5.0, 4.0, 5.0])
        hi = np.array([-5.0, -4.0, 5.0, np.inf])
        np.testing.assert_allclose(representatives(lo, hi, 1.0), [-5.5, -4.5, 4.5, 5.5])


class TestComparators:
    def test_gamma_glm_score_equations(self):
        rng = np.random.default_rng(0)
        X = np.c_[np.ones(300), rng.normal(size=(300, 2))]
        mu = np.exp(X @ [0.5, 0.3, -0.2])
        y = rng.gamma(2.0, mu / 2.0)
        beta = gamma_glm_irls(X, y)
        # log-link gamma score: X'(y / mu - 1) = 0
        np.testing.assert_allclose(X.T @ (y / np.exp(X @ beta) - 1.0), 0.0, atol=1e-8)
        np.testing.assert_allclose(beta, [0.5, 0.3, -0.2], atol=0.15)

    def test_lasso_kkt(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 80))
        y = X[:, :3] @ [1.0, -1.0, 0.5] + 0.3 * rng.normal(size=50)
        lam = 0.1
        b = lasso_cd(X, y, lam, tol=1e-13)
        g = X.T @ (y - X @ b) / 50
        act = b != 0
        np.testing.assert_allclose(g[act], lam * np.sign(b[act]), atol=1e-9)
        assert np.all(np.abs(g[~act]) <= lam + 1e-9)

    def test_lasso_zero_above_max(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 10))
        y = rng.normal(size=30)
        lam = np.abs(X.T @ y).max() / 30
        assert not lasso_cd(X, y, lam * 1.0001).any()


class TestExperiment:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(setting="other")
        with pytest.raises(ValueError):
            SimConfig(setting=LOWDIM, p=5)
        with pytest.raises(ValueError):
            SimConfig(interval_size=0.0)
        cfg = SimConfig.from_dict({"n": 50, "unused": 1})
        assert cfg.n == 50

    @pytest.mark.parametrize("setting,p", [(LOWDIM, 3), (HIGHDIM, 40)])
    def test_single_replication_report(self, setting, p):
        rep = run_experiment(SimConfig(setting=setting, n=60, p=p, replications=1, seed=1, n_lambda=6))
        d = rep.to_dict()
        assert set(d) >= {"config", "methods", "sse_nonzero", "mean_misclass", "mc_standard_errors", "n_failed"}
        assert len(rep.methods) == 2 and rep.n_failed == 0
        for m in rep.methods:
            assert rep.sse_nonzero[m] >= 0 and 0 <= rep.mean_misclass[m] <= 1
            assert rep.mc_standard_errors[m]["sse"] >= 0 and rep.mc_standard_errors[m]["misclass"] >= 0
        json.dumps(d)

    def test_deterministic_and_thread_invariant(self):
        cfg = SimConfig(setting=LOWDIM, n=80, replications=6, seed=3)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        c = run_experiment(SimConfig.from_dict({**a.config, "n_jobs": 3}))
        assert a.to_dict() == b.to_dict()
        assert a.sse_nonzero == c.sse_nonzero and a.mean_misclass == c.mean_misclass
        for m in a.methods:
            np.testing.assert_array_equal(a.per_replication[m]["sse"], c.per_replication[m]["sse"])

    def test_highdim_thread_invariant(self):
        cfg = SimConfig(setting=HIGHDIM, n=50, p=60, replications=3, seed=4, n_lambda=6)
        a = run_experiment(cfg)
        b = run_experiment(SimConfig.from_dict({**a.config, "n_jobs": 3}))
        assert a.sse_nonzero == b.sse_nonzero and a.mean_misclass == b.mean_misclass

    def test_write_reports(self, tmp_path):
        reps = run_sweep(SimConfig(setting=LOWDIM, n=50, replications=2, seed=0), [1.0, 2.0])
        paths = write_reports(reps, tmp_path)
        doc = json.loads(paths["json"].read_text())
        assert doc["schema_version"] == 1 and len(doc["reports"]) == 2
        with paths["csv"].open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        with paths["plot"].open() as fh:
            tidy = list(csv.DictReader(fh))
        assert len(tidy) == 8
        assert {r["metric"] for r in tidy} == {"sse", "misclassification"}
        assert {float(r["interval_size"]) for r in tidy} == {1.0, 2.0}
