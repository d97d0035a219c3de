import math
import warnings

import numpy as np
import pytest

from mlparch.exceptions import InvalidInputError, OptimizationError
from mlparch.likelihood import Dataset, NoiseModel
from mlparch.network import MlpParams, Tanh
from mlparch.optim import BoundaryWarning, FitConfig
from mlparch.selection import (
    Penalty,
    SelectionResult,
    check_h4,
    penalty_value,
    select_architecture,
)
from mlparch.simulate import InputDistribution, generate_dataset


class TestPenaltyValue:

    def test_bic_at_e_squared(self):
        assert penalty_value(Penalty("bic"), 1, math.e**2, 1) == pytest.approx(4.0, rel=1e-15)

    def test_bic_k2_d3(self):
        assert penalty_value(Penalty("bic"), 2, 100, 3) == pytest.approx(5.5 * math.log(100), rel=1e-15)
        assert penalty_value(Penalty("bic"), 2, 100, 3) == pytest.approx(25.3284, abs=1e-4)

    def test_bic_rate_vanishes(self):
        p = [penalty_value(Penalty("bic"), 3, n, 2) / n for n in (1e2, 1e3, 1e4, 1e5, 1e6)]
        assert np.all(np.diff(p) < 0)
        assert p[-1] < 1e-3 * p[0]

    def test_aic_and_power(self):
        assert penalty_value(Penalty("aic"), 2, 10, 3) == 11.0
        assert penalty_value(Penalty("power", c=2.0, alpha=0.5), 3, 100, 1) == pytest.approx(60.0)

    def test_custom(self):
        pen = Penalty("custom", func=lambda k, n, d: k * n)
        assert penalty_value(pen, 3, 7, 1) == 21.0

    def test_invalid_n(self):
        with pytest.raises(InvalidInputError):
            penalty_value(Penalty("bic"), 1, 0, 1)

    @pytest.mark.parametrize("text,kind", [("bic", "bic"), ("AIC", "aic"), ("power:1:0.5", "power")])
    def test_parse(self, text, kind):
        pen = Penalty.parse(text)
        assert pen.kind == kind
        assert Penalty.parse(str(pen)) == pen

    def test_parse_rejects(self):
        with pytest.raises(InvalidInputError):
            Penalty.parse("power:1")


class TestCheckH4:
    grid = [10**2, 10**3, 10**4, 10**5]

    def test_bic_passes(self):
        rep = check_h4(Penalty("bic"), 10, self.grid, 1)
        assert rep.passed and rep.counterexamples == {}

    def test_aic_fails_gap_condition(self):
        rep = check_h4(Penalty("aic"), 10, self.grid, 1)
        assert rep.increasing_in_k and rep.vanishing_rate
        assert not rep.gap_diverges
        cex = rep.counterexamples["gap_diverges"]
        assert cex["gap_from"] == cex["gap_to"]

    def test_root_n_passes(self):
        rep = check_h4(Penalty("custom", func=lambda k, n, d: k * math.sqrt(n)), 10, self.grid, 1)
        assert rep.passed

    def test_linear_in_n_fails_rate(self):
        rep = check_h4(Penalty("custom", func=lambda k, n, d: k * n), 5, self.grid, 1)
        assert not rep.vanishing_rate

    def test_flat_in_k_fails_monotonicity(self):
        rep = check_h4(Penalty("custom", func=lambda k, n, d: math.log(n)), 5, self.grid, 1)
        assert not rep.increasing_in_k
        assert rep.counterexamples["increasing_in_k"]["n"] == 100

    def test_grid_must_increase(self):
        with pytest.raises(InvalidInputError):
            check_h4(Penalty("bic"), 3, [100, 100], 1)


def _data(n, sigma2, seed, theta0=None):
    theta0 = theta0 or MlpParams(0.0, [2.0], [1.0], [[1.5]])
    return generate_dataset(theta0, Tanh(), NoiseModel(sigma2), InputDistribution("standard_normal", 1), n, seed)


@pytest.fixture(autouse=True)
def _quiet_boundary():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        yield


class TestSelect:

    def test_rows_and_argmax(self):
        data = _data(300, 0.09, 1)
        res = select_architecture(data, 3, Penalty("bic"), Tanh(), NoiseModel(0.09), FitConfig(restarts=4))
        assert [row[0] for row in res.per_k] == [1, 2, 3]
        for k, ll, p, t in res.per_k:
            assert abs(t - (ll - penalty_value(Penalty("bic"), k, 300, 1))) <= 1e-12
        T = [row[3] for row in res.per_k]
        assert res.k_hat == int(np.argmax(T)) + 1
        lls = [row[1] for row in res.per_k]
        assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))
        assert len(res.fits) == 3

    def test_true_architecture_found(self):
        data = _data(2000, 0.09, 2)
        res = select_architecture(data, 3, Penalty("bic"), Tanh(), NoiseModel(0.09), FitConfig(restarts=10))
        assert res.k_hat == 1
        assert not res.still_increasing

    def test_two_unit_truth_not_underfit(self):
        theta0 = MlpParams(0.0, [2.0, -1.5], [1.0, -1.0], [[2.0], [-0.5]])
        data = _data(2000, 0.04, 3, theta0)
        res = select_architecture(data, 3, Penalty("bic"), Tanh(), NoiseModel(0.04), FitConfig(restarts=10))
        assert res.k_hat == 2

    def test_zero_penalty_picks_largest(self):
        data = _data(300, 0.09, 4)
        zero = Penalty("custom", func=lambda k, n, d: 0.0)
        res = select_architecture(data, 3, zero, Tanh(), NoiseModel(0.09), FitConfig(restarts=4))
        T = [row[3] for row in res.per_k]
        assert all(b >= a - 1e-6 for a, b in zip(T, T[1:]))
        assert T[2] > T[0]
        assert res.k_hat == 3

    def test_single_observation(self):
        data = Dataset([[0.3]], [1.2])
        res = select_architecture(data, 3, Penalty("bic"), Tanh(), NoiseModel(0.09), FitConfig(restarts=3))
        assert res.k_hat == 1
        assert all(f.rss < 1e-20 for f in res.fits)

    def test_constant_shift_of_penalty(self):
        data = _data(300, 0.09, 5)
        cfg = FitConfig(restarts=4)
        base = select_architecture(data, 3, Penalty("bic"), Tanh(), NoiseModel(0.09), cfg)
        shifted = Penalty("custom", func=lambda k, n, d: penalty_value(Penalty("bic"), k, n, d) + 1234.5)
        other = select_architecture(data, 3, shifted, Tanh(), NoiseModel(0.09), cfg)
        assert other.k_hat == base.k_hat

    def test_independent_fits_mode(self):
        data = _data(200, 0.09, 6)
        res = select_architecture(data, 2, Penalty("bic"), Tanh(), NoiseModel(0.09),
                                  FitConfig(restarts=4), warm_start=False)
        assert len(res.per_k) == 2

    def test_failure_propagates_with_k(self):
        data = Dataset(np.ones((4, 1)), [np.nan] * 4)
        with pytest.raises(OptimizationError) as info:
            select_architecture(data, 2, Penalty("bic"), Tanh(), NoiseModel(1.0), FitConfig(restarts=1))
        assert info.value.k == 1

    def test_rescore(self):
        data = _data(200, 0.09, 7)
        res = select_architecture(data, 2, Penalty("bic"), Tanh(), NoiseModel(1.0), FitConfig(restarts=3))
        again = res.rescore(NoiseModel(0.09))
        for (k, ll, p, t), fit in zip(again.per_k, again.fits):
            assert ll == pytest.approx(-100 * math.log(2 * math.pi * 0.09) - fit.rss / 0.18)
        assert isinstance(again, SelectionResult)

    def test_invalid_M(self):
        with pytest.raises(InvalidInputError):
            select_architecture(_data(10, 0.09, 1), 0, Penalty("bic"), Tanh(), NoiseModel(1.0))
