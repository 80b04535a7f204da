import math

import numpy as np
import pytest

import oracles
from norm_mmse.model import ModelParams, RngSeed
from norm_mmse.montecarlo import (McConfig, RunningMoments, compare, empirical_mmse,
                                  paired_plugin_comparison, worker_count)
from norm_mmse.mse import mmse_limit_sigma_inf


class TestRunningMoments:
    def test_matches_numpy(self):
        v = np.random.default_rng(0).normal(3.0, 2.0, size=10_001)
        m = RunningMoments()
        for chunk in np.array_split(v, 7):
            m.update(chunk)
        assert m.count == v.size
        assert m.mean == pytest.approx(v.mean(), rel=1e-13)
        assert m.variance == pytest.approx(v.var(ddof=1), rel=1e-12)

    def test_merge_order_insensitive(self):
        parts = [np.random.default_rng(i).exponential(size=1000 + i) for i in range(6)]
        fwd, rev = RunningMoments(), RunningMoments()
        for p in parts:
            m = RunningMoments(); m.update(p); fwd.merge(m)
        for p in reversed(parts):
            m = RunningMoments(); m.update(p); rev.merge(m)
        assert fwd.mean == pytest.approx(rev.mean, rel=1e-10)
        assert fwd.m2 == pytest.approx(rev.m2, rel=1e-10)

    def test_empty(self):
        m = RunningMoments()
        m.update([])
        assert m.count == 0 and math.isnan(m.std_error)


class TestConfig:
    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            McConfig(99)

    def test_seed_coercion(self):
        assert McConfig(100, seed=5).seed == RngSeed(5)

    @pytest.mark.parametrize("kwargs", [{"batch": 0}, {"estimator_mode": "x"},
                                        {"estimator_mode": "sampled"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            McConfig(1000, **kwargs)


class TestOracle:
    def test_large_noise_limit(self):
        est = empirical_mmse(ModelParams(2, 2, 1e3), McConfig(100_000, seed=1))
        assert abs(est.z_score(mmse_limit_sigma_inf(2))) <= 4

    def test_prior_variance(self):
        est = empirical_mmse(ModelParams(4, 0, 1.0), McConfig(100_000, seed=2))
        assert abs(est.z_score(4 - 2 * (math.gamma(2.5) / math.gamma(2)) ** 2)) <= 4

    def test_negative_control(self):
        from norm_mmse.mse import mmse_closed_form
        wrong = mmse_closed_form(ModelParams(2, 2, 2.0))
        cmp = compare(ModelParams(2, 2, 1.0), McConfig(100_000, seed=3), closed_form=wrong)
        assert abs(cmp.z_score) > 10

    def test_comparison_fields(self):
        cmp = compare(ModelParams(3, 3, 1.0), McConfig(20_000, seed=4))
        assert cmp.z_score == pytest.approx((cmp.empirical.mean - cmp.closed_form) / cmp.empirical.std_error)

    def test_deterministic(self):
        cfg = McConfig(30_000, seed=RngSeed(42, 1), batch=7_000)
        a = compare(ModelParams(4, 2, 1.0), cfg)
        b = compare(ModelParams(4, 2, 1.0), cfg)
        assert a == b

    def test_thread_count_independent(self):
        cfg = McConfig(40_000, seed=9, batch=5_000)
        one = empirical_mmse(ModelParams(5, 2, 0.8), cfg, threads=1)
        four = empirical_mmse(ModelParams(5, 2, 0.8), cfg, threads=4)
        assert one == four

    def test_standard_error_scaling(self):
        p = ModelParams(3, 2, 1.0)
        small = empirical_mmse(p, McConfig(25_000, seed=10))
        large = empirical_mmse(p, McConfig(100_000, seed=11))
        assert small.std_error / large.std_error == pytest.approx(2.0, rel=0.2)

    def test_sampled_mode(self):
        est = empirical_mmse(ModelParams(6, 6, 1.0), McConfig(5_000, seed=12, estimator_mode="sampled",
                                                              n_subsets=1))
        assert est.n_samples == 5_000

    def test_progress_lines(self):
        seen = []
        empirical_mmse(ModelParams(2, 1, 1.0), McConfig(3_000, seed=5, batch=1_000),
                       progress=lambda b, mean, se: seen.append(b), threads=1)
        assert seen == [0, 1, 2]

    def test_paired_comparison_favours_estimator(self):
        pc = paired_plugin_comparison(ModelParams(4, 4, 0.5), McConfig(50_000, seed=6))
        assert pc.estimator.mean < pc.plugin.mean
        assert pc.z > 4 and pc.estimator_not_worse()

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("NORM_MMSE_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.delenv("NORM_MMSE_THREADS")
        assert worker_count() >= 1
