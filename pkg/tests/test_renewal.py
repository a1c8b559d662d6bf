import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from undercount.distribution import GammaCountDist, mean, pmf_table, truncation_point
from undercount.renewal import (
    BLOCK_SIZE,
    RenewalConfig,
    count_frequencies,
    gamma_count_variates,
    gamma_deviate,
    gamma_deviates,
    make_rng,
    simulate_events,
    simulate_first_window_counts,
    total_variation,
)
from undercount.special import DomainError, p_gamma


def analytic_tv(counts, alpha, bt):
    d = GammaCountDist(alpha, bt)
    n_max = max(int(counts.max()), truncation_point(d))
    table = pmf_table(d, n_max)
    return total_variation(count_frequencies(counts, n_max), table.probs, table.tail_mass)


class TestConfig:
    def test_beta_and_windows(self):
        cfg = RenewalConfig(2.0, 0.25, 10.0, 1.0)
        assert cfg.beta == 8.0
        assert cfg.n_windows == 10

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"mean_interarrival": -1.0}, {"horizon": math.inf},
                                    {"window_width": 20.0}, {"seed": -1}])
    def test_invalid(self, kw):
        base = {"alpha": 1.0, "mean_interarrival": 1.0, "horizon": 10.0, "window_width": 1.0, "seed": 0}
        base.update(kw)
        with pytest.raises(DomainError):
            RenewalConfig(**base)


class TestGammaDeviates:
    def test_moments(self):
        x = gamma_deviates(2.0, 2.0, 10**6, make_rng(1))
        assert_allclose(x.mean(), 1.0, atol=0.005)
        assert_allclose(x.var(), 0.5, atol=0.01)

    def test_exponential_median(self):
        x = gamma_deviates(1.0, 3.0, 10**6, make_rng(2))
        assert_allclose(np.mean(x < math.log(2) / 3), 0.5, atol=0.002)

    def test_boosted_small_shape_ks(self):
        n = 10**5
        x = gamma_deviates(0.5, 0.5, n, make_rng(3))
        cdf = np.vectorize(lambda t: p_gamma(0.5, 0.5 * t))
        ks = stats.kstest(x, cdf).statistic
        assert ks < stats.kstwo.ppf(0.99, n)

    @pytest.mark.parametrize("alpha", [0.3, 1.0, 4.5])
    def test_scalar_sampler_distribution(self, alpha):
        rng = make_rng(4)
        x = np.array([gamma_deviate(alpha, 2.0, rng) for _ in range(20000)])
        assert stats.kstest(x, stats.gamma(alpha, scale=0.5).cdf).pvalue > 1e-3

    def test_all_positive(self):
        x = gamma_deviates(0.05, 1.0, 10**5, make_rng(5))
        assert np.all(x >= 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_deviate(0.0, 1.0, make_rng(0))
        with pytest.raises(DomainError):
            gamma_deviates(1.0, -1.0, 3, make_rng(0))


class TestSimulateEvents:
    def test_poisson_windows(self):
        res = simulate_events(RenewalConfig(1.0, 1.0, 1e6, 1.0, seed=1))
        assert_allclose(res.window_counts.mean(), 1.0, atol=0.01)
        assert_allclose(res.window_counts.var(), 1.0, atol=0.02)

    def test_overdispersed_windows(self):
        res = simulate_events(RenewalConfig(0.5, 1.0, 1e6, 1.0, seed=2))
        c = res.window_counts
        assert c.var() / c.mean() > 1.0

    def test_underdispersed_windows(self):
        res = simulate_events(RenewalConfig(2.0, 0.25, 1e6, 1.0, seed=3))
        c = res.window_counts
        assert c.var() / c.mean() < 1.0

    def test_consecutive_windows_follow_stationary_rate(self):
        # a long realization settles at one event per mean interarrival
        res = simulate_events(RenewalConfig(2.0, 0.25, 1e6, 1.0, seed=7))
        assert_allclose(res.window_counts.mean(), 4.0, atol=0.01)

    @pytest.mark.xfail(strict=True, reason="consecutive windows of one realization are not ordinary "
                                           "renewal windows; only the first window follows the count pmf")
    def test_consecutive_windows_match_count_pmf(self):
        res = simulate_events(RenewalConfig(2.0, 0.25, 1e6, 1.0, seed=7))
        assert analytic_tv(res.window_counts, 2.0, 8.0) <= 0.005

    def test_result_invariants(self):
        cfg = RenewalConfig(1.7, 0.3, 500.0, 2.5, seed=9)
        res = simulate_events(cfg)
        t = res.event_times
        assert np.all(np.diff(t) > 0)
        assert np.all((t > 0) & (t < cfg.horizon))
        edge = cfg.n_windows * cfg.window_width
        assert res.window_counts.sum() == np.sum(t < edge)
        assert res.window_counts.size == cfg.n_windows

    def test_horizon_before_first_arrival(self):
        res = simulate_events(RenewalConfig(5.0, 1e6, 1.0, 1.0, seed=0))
        assert res.event_times.size == 0
        assert_array_equal(res.window_counts, [0])

    def test_reproducible(self):
        cfg = RenewalConfig(0.7, 0.5, 1e4, 1.0, seed=123)
        a, b = simulate_events(cfg), simulate_events(cfg)
        assert_array_equal(a.event_times, b.event_times)
        assert_array_equal(a.window_counts, b.window_counts)

    def test_seed_changes_output(self):
        a = simulate_events(RenewalConfig(1.0, 1.0, 1e3, 1.0, seed=1))
        b = simulate_events(RenewalConfig(1.0, 1.0, 1e3, 1.0, seed=2))
        assert not np.array_equal(a.event_times[:10], b.event_times[:10])


class TestFirstWindowReplicates:
    @pytest.mark.parametrize("alpha", [2.0, 1.0, 0.5])
    def test_matches_count_pmf(self, alpha):
        counts = simulate_first_window_counts(alpha, alpha / 8.0, 1.0, 10**6, seed=42)
        assert analytic_tv(counts, alpha, 8.0) <= 0.005

    def test_mean(self):
        counts = simulate_first_window_counts(3.0, 3.0 / 6.0, 1.0, 2 * 10**5, seed=5)
        assert_allclose(counts.mean(), mean(GammaCountDist(3.0, 6.0)), atol=0.02)

    def test_independent_of_worker_count(self):
        n = 3 * BLOCK_SIZE + 17
        a = simulate_first_window_counts(1.3, 0.2, 1.0, n, seed=8, workers=1)
        b = simulate_first_window_counts(1.3, 0.2, 1.0, n, seed=8, workers=4)
        assert_array_equal(a, b)

    def test_env_thread_cap(self, monkeypatch):
        n = 2 * BLOCK_SIZE
        ref = simulate_first_window_counts(0.8, 0.5, 1.0, n, seed=1, workers=1)
        for value in ("0", "3", "junk"):
            monkeypatch.setenv("UNDERCOUNT_THREADS", value)
            assert_array_equal(simulate_first_window_counts(0.8, 0.5, 1.0, n, seed=1), ref)

    def test_prefix_stable(self):
        # blocks own their streams, so extending the run leaves earlier blocks unchanged
        a = simulate_first_window_counts(2.0, 0.25, 1.0, BLOCK_SIZE, seed=3)
        b = simulate_first_window_counts(2.0, 0.25, 1.0, 2 * BLOCK_SIZE, seed=3)
        assert_array_equal(a, b[:BLOCK_SIZE])

    def test_zero_replicates(self):
        assert simulate_first_window_counts(1.0, 1.0, 1.0, 0, seed=0).size == 0


class TestGammaCountVariates:
    def test_regression_draws_match_pmf(self):
        bt = np.full(2 * 10**5, 5.112 * math.exp(2.2342))
        y = gamma_count_variates(5.112, bt, make_rng(6))
        assert analytic_tv(y, 5.112, bt[0]) <= 0.01

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_count_variates(1.0, [1.0, -2.0], make_rng(0))


class TestHelpers:
    def test_frequencies(self):
        assert_allclose(count_frequencies([0, 1, 1, 3], 2), [0.25, 0.5, 0.0])

    def test_total_variation(self):
        assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0
        assert_allclose(total_variation([1.0], [0.0, 1.0]), 1.0)
        assert_allclose(total_variation([0.5, 0.5], [0.5, 0.4], tail_mass=0.1), 0.1)
