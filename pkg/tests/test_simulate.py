import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from mlparch.distributions import InputDistribution
from mlparch.exceptions import InvalidInputError
from mlparch.likelihood import NoiseModel
from mlparch.network import MlpParams, Tanh, forward
from mlparch.optim import FitConfig
from mlparch.simulate import (
    ExperimentPlan,
    consistency_experiment,
    default_plan,
    derive_seed,
    generate_dataset,
    lrs_tightness_experiment,
)

THETA0 = MlpParams(0.0, [2.0], [1.0], [[1.5]])
STD1 = InputDistribution("standard_normal", 1)


class TestGenerate:

    def test_noiseless(self):
        data = generate_dataset(THETA0, Tanh(), NoiseModel(0.0), STD1, 500, 3)
        np.testing.assert_array_equal(data.ys, forward(THETA0, Tanh(), data.xs))

    def test_law_of_large_numbers(self):
        n, s2 = 10**6, 0.09
        data = generate_dataset(THETA0, Tanh(), NoiseModel(s2), STD1, n, 11)
        resid = data.ys - forward(THETA0, Tanh(), data.xs)
        assert abs(resid.mean()) < 4 * math.sqrt(s2 / n)
        assert abs(resid.var() / s2 - 1) < 0.02

    def test_residual_normality(self):
        n = 10**5
        data = generate_dataset(THETA0, Tanh(), NoiseModel(0.25), STD1, n, 12)
        resid = data.ys - forward(THETA0, Tanh(), data.xs)
        assert abs(stats.skew(resid)) < 4 * math.sqrt(6 / n)
        assert abs(stats.kurtosis(resid)) < 4 * math.sqrt(24 / n)

    def test_same_seed_same_data(self):
        a = generate_dataset(THETA0, Tanh(), NoiseModel(0.09), STD1, 100, 5)
        b = generate_dataset(THETA0, Tanh(), NoiseModel(0.09), STD1, 100, 5)
        c = generate_dataset(THETA0, Tanh(), NoiseModel(0.09), STD1, 100, 6)
        np.testing.assert_array_equal(a.xs, b.xs)
        np.testing.assert_array_equal(a.ys, b.ys)
        assert not np.array_equal(a.ys, c.ys)

    def test_metadata(self):
        data = generate_dataset(THETA0, Tanh(), NoiseModel(0.09), STD1, 10, 5)
        assert data.meta.seed == 5 and data.meta.sigma2 == 0.09 and data.meta.theta0 == THETA0

    def test_uniform_support(self):
        data = generate_dataset(THETA0, Tanh(), NoiseModel(0.09),
                                InputDistribution("uniform", 1, lo=-2.0, hi=3.0), 1000, 1)
        assert data.xs.min() >= -2.0 and data.xs.max() < 3.0

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            generate_dataset(THETA0, Tanh(), NoiseModel(0.09), STD1, 0, 1)
        with pytest.raises(InvalidInputError):
            generate_dataset(THETA0, Tanh(), NoiseModel(0.09), InputDistribution("standard_normal", 2), 5, 1)


class TestSeeds:

    def test_collision_free(self):
        seeds = {derive_seed(7, n, r, s) for n in (100, 500, 2000, 5000, 10_000)
                 for r in range(200) for s in (0, 1)}
        assert len(seeds) == 5 * 200 * 2

    def test_master_seed_matters(self):
        assert derive_seed(0, 100, 0) != derive_seed(1, 100, 0)

    def test_stable_value(self):
        assert derive_seed(0, 100, 0) == derive_seed(0, 100, 0)
        assert 0 <= derive_seed(0, 100, 0) < 2**64


def _small_plan(**kw):
    base = dict(n_grid=(100, 300), replications=4, fit_cfg=FitConfig(restarts=4))
    base.update(kw)
    return default_plan(**base)


class TestPlan:

    def test_default_values(self):
        plan = default_plan()
        assert plan.n_grid == (100, 500, 2000, 5000)
        assert plan.replications == 50 and plan.M == 3 and plan.k0 == 1
        assert plan.noise.sigma2 == pytest.approx(0.09)
        assert plan.theta0.to_flat().tolist() == [0.0, 2.0, 1.0, 1.5]
        assert str(plan.penalty) == "bic" and plan.fit_cfg.restarts == 20

    @pytest.mark.parametrize("kw", [dict(n_grid=(500, 100)), dict(n_grid=()), dict(replications=0), dict(M=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            default_plan(**kw)

    def test_noiseless_needs_fit_variance(self):
        with pytest.raises(ValueError):
            default_plan(noise=NoiseModel(0.0))
        assert default_plan(noise=NoiseModel(0.0), fit_sigma2=0.09).fit_noise.sigma2 == 0.09


class TestConsistency:

    def test_table_shape(self):
        tab = consistency_experiment(_small_plan())
        assert tab.columns[:5] == ["n", "replications", "failures", "valid", "freq_k0"]
        assert [row[0] for row in tab.rows] == [100, 300]
        for row in tab.rows:
            assert sum(row[5:]) == row[1] - row[2]
        assert len(tab.raw) == 8

    def test_noiseless_plan_recovers_k0(self):
        plan = _small_plan(noise=NoiseModel(0.0), fit_sigma2=0.09, replications=3)
        tab = consistency_experiment(plan)
        assert all(row[4] == 1.0 for row in tab.rows)

    def test_M_equal_k0(self):
        tab = consistency_experiment(_small_plan(M=1, replications=2))
        assert all(row[4] == 1.0 for row in tab.rows)

    def test_k0_above_M(self):
        theta0 = MlpParams(0.0, [1.0, 1.0], [0.0, 1.0], [[1.0], [-1.0]])
        with pytest.raises(InvalidInputError):
            consistency_experiment(_small_plan(theta0=theta0, M=1))

    def test_deterministic_across_workers(self):
        plan = _small_plan(replications=3)
        a = consistency_experiment(plan)
        b = consistency_experiment(plan, n_jobs=2)
        assert a.rows == b.rows and a.raw == b.raw

    def test_master_seed_changes_raw(self):
        a = consistency_experiment(_small_plan(replications=2))
        b = consistency_experiment(_small_plan(replications=2, master_seed=1))
        assert a.raw != b.raw


class TestLrs:

    def test_nonnegative_after_clamp(self):
        tab = lrs_tightness_experiment(_small_plan(replications=3), k_over=3)
        cols = tab.columns
        assert [r[0] for r in tab.rows] == ["bounded", "bounded", "loose", "loose"]
        assert [r[cols.index("box_bound")] for r in tab.rows] == [20.0, 20.0, 2000.0, 2000.0]
        for row in tab.rows:
            assert row[cols.index("median")] >= 0 and row[cols.index("q90")] >= row[cols.index("median")]
            assert row[cols.index("min_pre_clamp")] > -1e-6
        for rec in tab.raw:
            assert rec[2] > -1e-6 and rec[3] > -1e-6

    def test_k_over_equal_k0_is_zero(self):
        tab = lrs_tightness_experiment(_small_plan(replications=2), k_over=1)
        assert all(rec[2] == 0.0 and rec[3] == 0.0 for rec in tab.raw)

    def test_k_over_below_k0(self):
        with pytest.raises(InvalidInputError):
            lrs_tightness_experiment(_small_plan(), k_over=0)

    def test_deterministic_across_workers(self):
        plan = _small_plan(replications=2)
        a = lrs_tightness_experiment(plan, 2)
        b = lrs_tightness_experiment(plan, 2, n_jobs=2)
        assert a.raw == b.raw and a.rows == b.rows


def test_plan_dict_is_complete():
    d = default_plan().to_dict()
    assert set(d) >= {"theta0", "sigma2", "input", "n_grid", "replications", "M", "penalty", "fit", "master_seed"}
    assert replace(default_plan(), master_seed=3).to_dict()["master_seed"] == 3


def test_experiment_plan_direct_construction():
    plan = ExperimentPlan(THETA0, NoiseModel(0.09), STD1, [10, 20])
    assert plan.n_grid == (10, 20)
