import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlparch.exceptions import InvalidInputError, OptimizationError
from mlparch.likelihood import Dataset, NoiseModel, log_likelihood
from mlparch.network import MlpParams, Tanh, forward, n_params
from mlparch.optim import (
    BoundaryWarning,
    FitConfig,
    ParamSpace,
    embed,
    fit_mle,
    project,
)
from mlparch.simulate import InputDistribution, generate_dataset

from conftest import random_theta


class TestProjection:

    def test_member_unchanged(self):
        space = ParamSpace(2, 2, box_bound=10.0, eta=0.1)
        theta = MlpParams(1.0, [2.0, -3.0], [0.5, 1.0], [[1.0, 0.0], [0.05, 0.2]])
        assert space.contains(theta)
        assert project(theta, space) == theta

    def test_zero_weight_vector(self):
        space = ParamSpace(1, 2, box_bound=10.0, eta=0.1)
        out = project(MlpParams(0.0, [1.0], [0.0], [[0.0, 0.0]]), space)
        np.testing.assert_array_equal(out.W, [[0.1, 0.0]])

    def test_radial_scaling_and_clipping(self):
        space = ParamSpace(1, 1, box_bound=10.0, eta=0.1)
        out = project(MlpParams(15.0, [-12.0], [3.0], [[0.03]]), space)
        np.testing.assert_allclose(out.to_flat(), [10.0, -10.0, 3.0, 0.1], rtol=0, atol=1e-15)

    def test_eta_exceeding_box(self):
        space = ParamSpace(1, 2, box_bound=1.0, eta=1.2)
        out = project(MlpParams(0.0, [1.0], [0.0], [[0.1, 0.0]]), space)
        assert space.contains(out)

    @settings(max_examples=100, deadline=None)
    @given(k=st.integers(1, 3), d=st.integers(1, 3), data=st.data())
    def test_projection_lands_in_set_and_is_idempotent(self, k, d, data):
        flat = data.draw(arrays(np.float64, n_params(k, d), elements=st.floats(-50, 50)))
        space = ParamSpace(k, d, box_bound=20.0, eta=0.1)
        out = project(MlpParams.from_flat(flat, k, d), space)
        assert space.contains(out)
        assert project(out, space) == out

    def test_empty_space_rejected(self):
        with pytest.raises(InvalidInputError):
            ParamSpace(1, 1, box_bound=0.1, eta=0.2)


class TestEmbed:

    def test_function_and_likelihood_unchanged(self, rng, phi):
        theta = random_theta(rng, 2, 2)
        space = ParamSpace(4, 2)
        big = embed(theta, space)
        assert big.k == 4
        data = Dataset(rng.normal(size=(30, 2)), rng.normal(size=30))
        assert log_likelihood(big, phi, NoiseModel(0.5), data) == log_likelihood(theta, phi, NoiseModel(0.5), data)
        assert np.all(np.linalg.norm(big.W[2:], axis=1) == space.eta)


def _data(theta0, sigma2, n, seed):
    return generate_dataset(theta0, Tanh(), NoiseModel(sigma2), InputDistribution("standard_normal", theta0.d), n, seed)


class TestFit:

    def test_noiseless_recovery(self, theta_true):
        data = _data(theta_true, 0.0, 200, 1)
        res = fit_mle(ParamSpace(1, 1), Tanh(), NoiseModel(0.09), data, FitConfig(restarts=20, seed=3))
        assert res.rss <= 1e-6 * data.n

    def test_noiseless_two_units(self):
        theta0 = MlpParams(0.5, [1.5, -2.0], [1.0, -0.5], [[2.0, -1.0], [0.5, 1.5]])
        data = _data(theta0, 0.0, 300, 2)
        res = fit_mle(ParamSpace(2, 2), Tanh(), NoiseModel(0.01), data, FitConfig(restarts=20, seed=0))
        assert res.rss <= 1e-6 * data.n

    def test_constant_data(self, rng):
        c = 1.7
        data = Dataset(rng.normal(size=(100, 1)), np.full(100, c))
        res = fit_mle(ParamSpace(1, 1), Tanh(), NoiseModel(1.0), data, FitConfig(restarts=5))
        assert res.rss <= 1e-10
        np.testing.assert_allclose(forward(res.theta_hat, Tanh(), data.xs), c, atol=1e-6)

    def test_result_in_set_and_loglik_consistent(self, theta_true):
        data = _data(theta_true, 0.09, 300, 4)
        space = ParamSpace(2, 1)
        noise = NoiseModel(0.09)
        res = fit_mle(space, Tanh(), noise, data, FitConfig(restarts=5, seed=1))
        assert space.contains(res.theta_hat)
        assert res.loglik == pytest.approx(-0.5 * data.n * np.log(2 * np.pi * 0.09) - res.rss / 0.18, rel=1e-14)
        assert res.loglik == pytest.approx(log_likelihood(res.theta_hat, Tanh(), noise, data), rel=1e-12)

    def test_descent_per_restart(self, theta_true):
        data = _data(theta_true, 0.09, 200, 5)
        res = fit_mle(ParamSpace(2, 1), Tanh(), NoiseModel(0.09), data,
                      FitConfig(restarts=6, seed=2), record_trace=True)
        for trace in res.traces:
            assert np.all(np.diff(trace) <= 0)

    def test_deterministic(self, theta_true):
        data = _data(theta_true, 0.09, 200, 6)
        cfg = FitConfig(restarts=4, seed=11)
        a = fit_mle(ParamSpace(2, 1), Tanh(), NoiseModel(0.09), data, cfg)
        b = fit_mle(ParamSpace(2, 1), Tanh(), NoiseModel(0.09), data, cfg)
        c = fit_mle(ParamSpace(2, 1), Tanh(), NoiseModel(0.09), data, cfg, n_jobs=3)
        for other in (b, c):
            assert other.theta_hat == a.theta_hat
            assert other.loglik == a.loglik
            assert other.best_restart_index == a.best_restart_index

    def test_warm_start_monotone(self, theta_true):
        data = _data(theta_true, 0.09, 300, 7)
        noise = NoiseModel(0.09)
        prev = None
        for k in (1, 2, 3):
            space = ParamSpace(k, 1)
            init = [embed(prev.theta_hat, space)] if prev else None
            res = fit_mle(space, Tanh(), noise, data, FitConfig(restarts=3, seed=k), init=init)
            if prev is not None:
                assert res.loglik >= prev.loglik - 1e-6
            prev = res

    def test_boundary_warning(self):
        theta0 = MlpParams(0.0, [30.0], [0.0], [[1.0]])
        data = _data(theta0, 0.01, 100, 8)
        with pytest.warns(BoundaryWarning):
            res = fit_mle(ParamSpace(1, 1, box_bound=5.0), Tanh(), NoiseModel(0.01), data,
                          FitConfig(restarts=3))
        assert res.near_boundary

    def test_all_restarts_diverge(self):
        data = Dataset(np.ones((5, 1)), [np.nan] * 5)
        with pytest.raises(OptimizationError) as info:
            fit_mle(ParamSpace(1, 1), Tanh(), NoiseModel(1.0), data, FitConfig(restarts=2))
        assert len(info.value.diagnostics) == 2

    def test_dimension_mismatch(self, rng):
        data = Dataset(rng.normal(size=(5, 2)), rng.normal(size=5))
        with pytest.raises(ValueError):
            fit_mle(ParamSpace(1, 1), Tanh(), NoiseModel(1.0), data)


def test_no_warnings_on_interior_fit(theta_true):
    data = _data(theta_true, 0.09, 100, 9)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_mle(ParamSpace(1, 1), Tanh(), NoiseModel(0.09), data, FitConfig(restarts=3))
