import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from servescale.profiler import (FAMILIES, DegenerateDataError, ExecutionProfile, FittedDistribution, ProfilingError,
                                 SetupTimes, SpeedupWarning, build_profile, fit_mle, generate_samples, ks_statistic,
                                 load_samples, percentile_latency, rank_and_select, write_samples)


def brute_ks(x, cdf):
    """sup |F0 - Fn| from both one-sided limits at every distinct sample."""
    x = np.asarray(x, dtype=float)
    n = x.size
    best = 0.0
    for v in np.unique(x):
        f0 = float(cdf(np.array([v]))[0])
        left = np.count_nonzero(x < v) / n
        right = np.count_nonzero(x <= v) / n
        best = max(best, abs(f0 - left), abs(f0 - right))
    return best


def uniform01(x):
    return np.clip(x, 0.0, 1.0)


class TestKS:
    def test_two_points_vs_uniform(self):
        assert ks_statistic([0.25, 0.75], uniform01) == pytest.approx(0.25, abs=1e-15)

    def test_single_sample_at_median(self):
        d = FittedDistribution("normal", (1.0, 0.2))
        assert ks_statistic([1.0], d) == pytest.approx(0.5, abs=1e-15)

    def test_converges_on_own_samples(self):
        d = FittedDistribution("gamma", (2.0, 0.1))
        x = d.sample(np.random.default_rng(3), 10_000)
        assert ks_statistic(x, d) < 0.02

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=80), st.floats(0.1, 3.0))
    def test_matches_brute_force_with_ties(self, xs, rate):
        d = FittedDistribution("exponential", (rate,))
        xs = xs + xs[: len(xs) // 3]  # inject ties
        assert ks_statistic(xs, d) == pytest.approx(brute_ks(xs, d.cdf), abs=1e-12)

    def test_empty(self):
        with pytest.raises(ProfilingError):
            ks_statistic([], uniform01)


class TestFit:
    def test_exponential_rate_is_inverse_mean(self):
        x = 0.5 + np.linspace(-0.2, 0.2, 41)
        assert fit_mle(x, "exponential").params[0] == pytest.approx(2.0, rel=1e-12)

    def test_degenerate_normal(self):
        with pytest.raises(DegenerateDataError):
            fit_mle([1.0, 1.0, 1.0], "normal", min_samples=1)

    def test_too_few_samples(self):
        with pytest.raises(ProfilingError):
            fit_mle([0.1, 0.2], "normal")

    def test_unknown_family(self):
        with pytest.raises((ProfilingError, KeyError, ValueError)):
            fit_mle(np.linspace(0.1, 1, 50), "cauchy")

    def test_gamma_shape_matches_grid_likelihood(self):
        x = FittedDistribution("gamma", (2.0, 0.1)).sample(np.random.default_rng(11), 10_000)
        shape, scale = fit_mle(x, "gamma").params
        # oracle: dense grid over (shape, scale) of the log-likelihood
        shapes = np.linspace(1.8, 2.2, 401)
        scales = np.linspace(0.09, 0.11, 201)
        s_log, s_x, n = np.log(x).sum(), x.sum(), x.size
        A, B = np.meshgrid(shapes, scales, indexing="ij")
        from scipy.special import gammaln
        ll = (A - 1) * s_log - s_x / B - n * (gammaln(A) + A * np.log(B))
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        assert abs(shape - 2.0) / 2.0 < 0.05
        assert shape == pytest.approx(shapes[i], abs=2e-3)
        assert scale == pytest.approx(scales[j], abs=2e-4)

    @pytest.mark.parametrize("family,params,scipy_dist", [
        ("normal", (1.0, 0.1), stats.norm(1.0, 0.1)),
        ("log-normal", (-1.0, 0.3), stats.lognorm(0.3, scale=math.exp(-1.0))),
        ("gamma", (2.0, 0.1), stats.gamma(2.0, scale=0.1)),
        ("weibull", (3.0, 0.5), stats.weibull_min(3.0, scale=0.5)),
        ("exponential", (2.0,), stats.expon(scale=0.5)),
    ])
    def test_cdf_ppf_match_scipy(self, family, params, scipy_dist):
        d = FittedDistribution(family, params)
        grid = scipy_dist.ppf(np.linspace(0.01, 0.99, 25))
        assert np.allclose(d.cdf(grid), scipy_dist.cdf(grid), atol=1e-12)
        for q in (0.05, 0.5, 0.95, 0.99):
            assert d.ppf(q) == pytest.approx(scipy_dist.ppf(q), rel=1e-9)
        x = d.sample(np.random.default_rng(0), 20_000)
        assert x.mean() == pytest.approx(scipy_dist.mean(), rel=0.02)
        assert d.mean == pytest.approx(scipy_dist.mean(), rel=1e-12)

    @pytest.mark.parametrize("family,params", [
        ("gamma", (2.0, 0.1)), ("log-normal", (-1.0, 0.3)), ("weibull", (3.0, 0.5)),
    ])
    def test_mle_recovers_parameters(self, family, params):
        x = FittedDistribution(family, params).sample(np.random.default_rng(5), 10_000)
        assert np.allclose(fit_mle(x, family).params, params, rtol=0.05)


class TestRankAndSelect:
    def test_gamma_selected(self):
        x = FittedDistribution("gamma", (2.0, 0.1)).sample(np.random.default_rng(1), 10_000)
        assert rank_and_select(x).family == "gamma"

    def test_lognormal_selected(self):
        x = FittedDistribution("log-normal", (-1.0, 0.3)).sample(np.random.default_rng(1), 10_000)
        assert rank_and_select(x).family == "log-normal"

    def test_identical_samples(self):
        with pytest.raises(ProfilingError):
            rank_and_select([0.3] * 3, min_samples=1)

    def test_selected_distance_is_near_minimal(self):
        x = FittedDistribution("weibull", (3.0, 0.5)).sample(np.random.default_rng(2), 5000)
        chosen = rank_and_select(x)
        others = [fit_mle(x, f).ks_statistic for f in FAMILIES]
        assert chosen.ks_statistic <= min(others) + 1 / math.sqrt(x.size)
        assert rank_and_select(x, tie_tolerance=0.0).ks_statistic == min(others)

    def test_executor_does_not_change_result(self):
        x = FittedDistribution("gamma", (2.0, 0.1)).sample(np.random.default_rng(9), 3000)
        with ThreadPoolExecutor(4) as pool:
            assert rank_and_select(x, executor=pool) == rank_and_select(x)

    def test_simpler_family_wins_ties(self):
        # exponential data: gamma nests it with shape ~1 and fits as well
        x = FittedDistribution("exponential", (2.0,)).sample(np.random.default_rng(4), 10_000)
        assert rank_and_select(x).family == "exponential"


class TestPercentile:
    def test_exponential(self):
        d = FittedDistribution("exponential", (2.0,))
        assert percentile_latency(d, 0.95) == pytest.approx(1.4978661367769954, rel=1e-12)

    def test_normal_median_and_p95(self):
        d = FittedDistribution("normal", (1.0, 0.1))
        assert percentile_latency(d, 0.5) == pytest.approx(1.0, abs=1e-12)
        assert percentile_latency(d, 0.95) == pytest.approx(1.1644853626951472, rel=1e-12)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
    def test_range(self, q):
        with pytest.raises(ValueError):
            percentile_latency(FittedDistribution("normal", (1.0, 0.1)), q)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from([("normal", (1.0, 0.1)), ("log-normal", (-1.0, 0.3)), ("gamma", (2.0, 0.1)),
                            ("weibull", (3.0, 0.5)), ("exponential", (2.0,))]),
           st.floats(0.01, 0.98), st.floats(0.001, 0.01))
    def test_strictly_increasing(self, fam, q, dq):
        d = FittedDistribution(*fam)
        assert percentile_latency(d, q) < percentile_latency(d, q + dq)


class TestProfile:
    def _samples(self):
        dists = {2: FittedDistribution("log-normal", (math.log(0.7), 0.15)),
                 4: FittedDistribution("log-normal", (math.log(0.45), 0.15))}
        return generate_samples(dists, 2000, seed=1)

    def test_build_and_round_trip(self, tmp_path):
        prof = build_profile(self._samples(), service="m", q=0.95, min_mem=2.0,
                             setup_times=SetupTimes(90, 30, 10, 0))
        assert prof.core_counts == [2, 4]
        assert prof.t_p(4) < prof.t_p(2)
        assert prof.t_p(8) is None
        path = tmp_path / "p.json"
        prof.save(path)
        assert ExecutionProfile.load(path) == prof
        data = json.loads(path.read_text())
        assert {"service", "q", "min_mem_gb", "setup_times_s", "per_core"} <= set(data)
        assert set(data["per_core"][0]) >= {"cores", "family", "params", "ks", "t_p_s"}

    def test_percentile_choice(self):
        s = self._samples()
        p95 = build_profile(s, q=0.95)
        p99 = build_profile(s, q=0.99)
        assert p99.t_p(2) > p95.t_p(2)

    def test_speedup_violation_warns(self):
        dists = {2: FittedDistribution("normal", (0.5, 0.05)), 4: FittedDistribution("normal", (0.8, 0.05))}
        with pytest.warns(SpeedupWarning):
            prof = build_profile(generate_samples(dists, 500, seed=0))
        assert prof.speedup_violations() == [(2, 4)]

    def test_samples_csv_round_trip(self, tmp_path):
        s = self._samples()
        path = tmp_path / "s.csv"
        write_samples(s, path)
        back = load_samples(path)
        assert sorted(back) == [2, 4]
        assert np.array_equal(back[2], s[2])

    def test_negative_latency_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("cores,latency_seconds\n2,0.5\n2,-0.1\n")
        with pytest.raises(ProfilingError, match=":3:"):
            load_samples(path)

    def test_setup_sum(self):
        assert SetupTimes(100, 40, 20, 5).setup == 160
