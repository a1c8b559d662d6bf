import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import optimize, stats

from undercount.design import build_design
from undercount.poisson import (
    IterationLimitError,
    NestingError,
    SingularDesignError,
    fit_poisson,
    pearson_dispersion,
    pearson_dispersion_test,
    poisson_deviance,
    poisson_loglik,
    poisson_summary,
    quasi_f_test,
    quasi_summary,
)
from undercount.renewal import gamma_count_variates, make_rng


def ones(n):
    return np.ones((n, 1))


def direct_mle(X, y):
    """Oracle: maximize the analytic Poisson log-likelihood with a generic optimizer."""
    def nll(b):
        eta = X @ b
        return -(y @ eta - np.exp(eta).sum())

    def grad(b):
        return -(X.T @ (y - np.exp(X @ b)))

    b0 = np.zeros(X.shape[1])
    b0[0] = math.log(y.mean())
    return optimize.minimize(nll, b0, jac=grad, method="BFGS", options={"gtol": 1e-10}).x


class TestFitPoisson:
    def test_intercept_only_closed_form(self):
        y = np.array([3, 0, 7, 2, 5, 4, 1, 9])
        fit = fit_poisson(ones(8), y)
        assert abs(fit.coefficients[0] - math.log(y.mean())) <= 1e-12
        assert_allclose(fit.cov[0, 0], 1 / y.sum(), rtol=1e-10)

    def test_constant_counts_saturate(self):
        fit = fit_poisson(ones(6), np.full(6, 4))
        assert fit.deviance == pytest.approx(0.0, abs=1e-12)

    def test_full_loglik_matches_scipy(self):
        y = np.array([3, 0, 7, 2, 5])
        fit = fit_poisson(ones(5), y)
        assert_allclose(fit.loglik, stats.poisson.logpmf(y, y.mean()).sum(), rtol=1e-12)

    def test_against_generic_optimizer(self, synth):
        X = build_design(synth, 5)
        fit = fit_poisson(X, synth.counts)
        assert_allclose(fit.coefficients, direct_mle(X.matrix, synth.counts.astype(float)), atol=1e-6)

    @pytest.mark.parametrize("k", range(1, 6))
    def test_score_equations(self, synth, k):
        X = build_design(synth, k).matrix
        y = synth.counts.astype(float)
        fit = fit_poisson(X, y)
        score = X.T @ (y - fit.fitted)
        assert np.abs(score).max() <= 1e-8 * (1 + np.abs(X.T @ y).max())

    def test_invariants(self, synth):
        fit = fit_poisson(build_design(synth, 5), synth.counts)
        assert np.all(fit.fitted > 0)
        assert fit.deviance >= 0
        assert_allclose(fit.cov, fit.cov.T)
        assert np.all(np.linalg.eigvalsh(fit.cov) > 0)
        assert fit.converged
        assert fit.n_params == fit.p == 11

    def test_aic_arithmetic(self, synth):
        fit = fit_poisson(build_design(synth, 5), synth.counts)
        assert_allclose(2 * fit.p - 2 * fit.loglik, 22 - 2 * fit.loglik)

    def test_singular_design(self):
        X = np.column_stack([np.ones(5), np.ones(5)])
        with pytest.raises(SingularDesignError):
            fit_poisson(X, [1, 2, 3, 4, 5])

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            fit_poisson(ones(3), [1, -1, 2])
        with pytest.raises(ValueError):
            fit_poisson(ones(3), [1, 1.5, 2])

    def test_iteration_limit_carries_state(self):
        y = np.array([0, 0, 0, 5])
        X = np.column_stack([np.ones(4), [1.0, 1.0, 1.0, 0.0]])
        with pytest.raises(IterationLimitError) as exc:
            fit_poisson(X, y, max_iter=2)
        assert "coefficients" in exc.value.state

    def test_deviance_zero_log_zero(self):
        assert poisson_deviance([0, 2], [1.0, 2.0]) == pytest.approx(2.0)
        assert poisson_loglik([0], [1.0]) == pytest.approx(-1.0)


class TestDispersion:
    def test_equidispersed(self):
        y = make_rng(1).poisson(6.0, 10**4)
        phi = pearson_dispersion(fit_poisson(ones(y.size), y))
        assert abs(phi - 1.0) <= 0.05

    def test_underdispersed_gamma_count(self):
        y = gamma_count_variates(5.0, np.full(10**4, 40.0), make_rng(2))
        assert pearson_dispersion(fit_poisson(ones(y.size), y)) < 1.0

    def test_requires_residual_df(self):
        fit = fit_poisson(np.eye(2), [1, 2])
        with pytest.raises(ValueError):
            pearson_dispersion(fit)

    def test_dispersion_test_two_sided(self):
        fit = fit_poisson(ones(200), make_rng(4).poisson(3.0, 200))
        stat, p = pearson_dispersion_test(fit)
        df = fit.n - fit.p
        ref = 2 * min(stats.chi2.cdf(stat, df), stats.chi2.sf(stat, df))
        assert_allclose(p, min(1.0, ref), rtol=1e-10)


class TestQuasi:
    def test_ratio_identity(self, synth):
        fit = fit_poisson(build_design(synth, 5), synth.counts)
        phi = pearson_dispersion(fit)
        for pr, qr in zip(poisson_summary(fit), quasi_summary(fit)):
            assert qr.estimate == pr.estimate
            assert_allclose(qr.ratio * math.sqrt(phi), pr.ratio, rtol=1e-14)
            if phi < 1:
                assert qr.se < pr.se

    def test_unit_dispersion_is_identity(self, monkeypatch, synth):
        fit = fit_poisson(build_design(synth, 2), synth.counts)
        monkeypatch.setattr("undercount.poisson.pearson_dispersion", lambda f: 1.0)
        for pr, qr in zip(poisson_summary(fit), quasi_summary(fit)):
            assert (pr.estimate, pr.se, pr.ratio) == (qr.estimate, qr.se, qr.ratio)

    def test_f_test_arithmetic(self, synth):
        f4 = fit_poisson(build_design(synth, 4), synth.counts)
        f5 = fit_poisson(build_design(synth, 5), synth.counts)
        t = quasi_f_test(f4, f5)
        F = (f4.deviance - f5.deviance) / (4 * pearson_dispersion(f5))
        assert_allclose(t.F, F, rtol=1e-14)
        assert (t.df1, t.df2) == (4, 114)
        assert_allclose(t.p, stats.f.sf(F, 4, 114), rtol=1e-10)

    def test_identical_models(self, synth):
        f = fit_poisson(build_design(synth, 3), synth.counts)
        t = quasi_f_test(f, f)
        assert t.F == 0.0 and t.p == 1.0

    def test_non_nested(self, synth):
        f3 = fit_poisson(build_design(synth, 3), synth.counts)
        f2 = fit_poisson(build_design(synth, 2), synth.counts)
        with pytest.raises(NestingError):
            quasi_f_test(f3, f2)

    def test_different_data(self, synth):
        X = build_design(synth, 1)
        a = fit_poisson(X, synth.counts)
        b = fit_poisson(X, synth.counts + 1)
        with pytest.raises(NestingError):
            quasi_f_test(a, b)


@given(
    counts=st.lists(st.integers(0, 50), min_size=3, max_size=40).filter(lambda c: sum(c) > 0),
)
@settings(max_examples=60, deadline=None)
def test_intercept_mle_property(counts):
    y = np.array(counts)
    fit = fit_poisson(ones(y.size), y)
    assert_allclose(fit.coefficients[0], math.log(y.mean()), atol=1e-10)
    assert fit.deviance >= 0


@pytest.mark.parametrize("level", [4, 40, 4000])
def test_constant_counts_converge(level):
    # deviance sits at rounding-noise level; found by the intercept property above
    fit = fit_poisson(ones(4), np.full(4, level))
    assert_allclose(fit.coefficients[0], math.log(level), rtol=1e-14)
