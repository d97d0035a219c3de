"""scikit-learn compatible estimators.

``GaussianMLPRegressor`` fits a network with a fixed number of hidden units
by constrained maximum likelihood; ``MLPArchitectureSelector`` also picks
the number of units by penalized likelihood. Both follow the usual
``fit`` / ``predict`` / ``get_params`` protocol and can sit in pipelines
or be cloned by model-selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .likelihood import Dataset, NoiseModel
from .network import forward, get_transfer
from .optim import FitConfig, ParamSpace, fit_mle
from .selection import Penalty, select_architecture

__all__ = ["GaussianMLPRegressor", "MLPArchitectureSelector"]


def _seed_from(random_state) -> int:
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))


class _MLPBase(RegressorMixin, BaseEstimator):

    def _fit_config(self) -> FitConfig:
        return FitConfig(
            restarts=self.restarts,
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            init_scale=self.init_scale,
            seed=_seed_from(self.random_state),
            ftol=self.ftol,
        )

    def _validate_xy(self, X, y) -> Dataset:
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return Dataset(X, y)

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        return forward(self.theta_, get_transfer(self.transfer), X)


class GaussianMLPRegressor(_MLPBase):
    """One-hidden-layer network fitted by maximum likelihood over a compact set.

    Parameters
    ----------
    n_hidden : int, default=1
        Number of hidden units k.
    transfer : {"tanh", "logistic"}, default="tanh"
    sigma2 : float or None, default=None
        Known noise variance. ``None`` uses the plug-in ``RSS / n`` for the
        reported log-likelihood (the fitted weights do not depend on it).
    box_bound, eta : float
        Every coordinate lies in ``[-box_bound, box_bound]`` and every
        input-weight vector has norm at least ``eta``.
    restarts, max_iters, grad_tol, ftol, init_scale :
        Optimizer settings, see :class:`mlparch.optim.FitConfig`.
    random_state : int, RandomState or None
    n_jobs : int
        Threads across restarts.

    Attributes
    ----------
    theta_ : MlpParams
    fit_result_ : FitResult
    sigma2_ : float
    loglik_ : float
    """

    def __init__(self, n_hidden=1, transfer="tanh", sigma2=None, box_bound=20.0, eta=0.1,
                 restarts=20, max_iters=5000, grad_tol=1e-8, ftol=1e-8, init_scale=2.0,
                 random_state=0, n_jobs=1):
        self.n_hidden = n_hidden
        self.transfer = transfer
        self.sigma2 = sigma2
        self.box_bound = box_bound
        self.eta = eta
        self.restarts = restarts
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.ftol = ftol
        self.init_scale = init_scale
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        data = self._validate_xy(X, y)
        space = ParamSpace(self.n_hidden, data.d, self.box_bound, self.eta)
        noise = NoiseModel(1.0 if self.sigma2 is None else self.sigma2)
        res = fit_mle(space, get_transfer(self.transfer), noise, data, self._fit_config(),
                      n_jobs=self.n_jobs)
        if self.sigma2 is None:
            s2 = max(res.rss / data.n, np.finfo(float).tiny)
            noise = NoiseModel(s2)
            res.loglik = -0.5 * data.n * (np.log(2 * np.pi * s2)) - res.rss / (2 * s2)
        self.theta_ = res.theta_hat
        self.fit_result_ = res
        self.sigma2_ = noise.sigma2
        self.loglik_ = res.loglik
        return self


class MLPArchitectureSelector(_MLPBase):
    """Choose the number of hidden units by maximizing ``max l_n - p_n(k)``.

    Parameters
    ----------
    max_units : int, default=10
        Largest number of hidden units M considered.
    penalty : str or Penalty, default="bic"
        ``"bic"``, ``"aic"``, ``"power:c:alpha"`` or a :class:`Penalty`.
    sigma2 : float or None, default=None
        Known noise variance. ``None`` plugs in ``RSS_M / n`` from the
        largest model, after all fits.
    warm_start : bool, default=True
        Start each k-unit fit from the (k-1)-unit optimum as well.

    Remaining parameters as in :class:`GaussianMLPRegressor`.

    Attributes
    ----------
    k_hat_ : int
    selection_ : SelectionResult
    criterion_ : ndarray of shape (max_units,)
        ``T_n(k)`` for ``k = 1..max_units``.
    theta_ : MlpParams
        Fitted parameters of the selected model.
    sigma2_ : float
    """

    def __init__(self, max_units=10, penalty="bic", transfer="tanh", sigma2=None,
                 box_bound=20.0, eta=0.1, restarts=20, max_iters=5000, grad_tol=1e-8,
                 ftol=1e-8, init_scale=2.0, random_state=0, warm_start=True, n_jobs=1):
        self.max_units = max_units
        self.penalty = penalty
        self.transfer = transfer
        self.sigma2 = sigma2
        self.box_bound = box_bound
        self.eta = eta
        self.restarts = restarts
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.ftol = ftol
        self.init_scale = init_scale
        self.random_state = random_state
        self.warm_start = warm_start
        self.n_jobs = n_jobs

    def fit(self, X, y):
        data = self._validate_xy(X, y)
        pen = self.penalty if isinstance(self.penalty, Penalty) else Penalty.parse(self.penalty)
        noise = NoiseModel(1.0 if self.sigma2 is None else self.sigma2)
        sel = select_architecture(data, self.max_units, pen, get_transfer(self.transfer), noise,
                                  self._fit_config(), box_bound=self.box_bound, eta=self.eta,
                                  warm_start=self.warm_start, n_jobs=self.n_jobs)
        if self.sigma2 is None:
            noise = NoiseModel(max(sel.fits[-1].rss / data.n, np.finfo(float).tiny))
            sel = sel.rescore(noise)
        self.selection_ = sel
        self.k_hat_ = sel.k_hat
        self.criterion_ = np.array([row[3] for row in sel.per_k])
        self.theta_ = sel.fits[sel.k_hat - 1].theta_hat
        self.sigma2_ = noise.sigma2
        return self
