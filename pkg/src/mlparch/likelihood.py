"""Gaussian likelihood of the regression model and derived quantities.

The observation density is ``N(y; F_theta(x), sigma2) * q(x)``. The input
density ``q`` never depends on theta, so every function here drops it:
log-likelihood differences, density ratios and normalized scores are all
unaffected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .distributions import InputDistribution
from .exceptions import (
    DegenerateDirectionError,
    InputShapeError,
    InvalidInputError,
    InvalidNoiseError,
)
from .network import MlpParams, TransferFunction, forward

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise with known variance ``sigma2``.

    ``sigma2 = 0`` may be constructed (noiseless data generation) but every
    likelihood evaluation rejects it.
    """

    sigma2: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise InvalidNoiseError(f"noise variance must be >= 0, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def check(self) -> None:
        if not self.sigma2 > 0:
            raise InvalidNoiseError(f"likelihood needs sigma2 > 0, got {self.sigma2}")


@dataclass(frozen=True)
class GenerationMeta:
    theta0: MlpParams | None = None
    sigma2: float | None = None
    input: str | None = None
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations (x_t, y_t); ``xs`` has shape (n, d), ``ys`` shape (n,)."""

    xs: np.ndarray
    ys: np.ndarray
    meta: GenerationMeta | None = field(default=None)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
            raise InputShapeError(f"xs {xs.shape} and ys {ys.shape} disagree")
        if xs.shape[0] < 1:
            raise InvalidInputError("dataset is empty")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]


def log_density_term(theta: MlpParams, phi: TransferFunction, noise: NoiseModel, x, y):
    """``-0.5 log(2 pi sigma2) - (y - F_theta(x))^2 / (2 sigma2)``.

    Scalar for a single observation, array for a batch.
    """
    noise.check()
    resid = np.asarray(y, dtype=float) - forward(theta, phi, x)
    return -0.5 * (LOG_2PI + math.log(noise.sigma2)) - resid**2 / (2.0 * noise.sigma2)


def rss(theta: MlpParams, phi: TransferFunction, data: Dataset) -> float:
    resid = data.ys - forward(theta, phi, data.xs)
    return float(np.dot(resid, resid))


def loglik_from_rss(rss_value: float, n: int, noise: NoiseModel) -> float:
    noise.check()
    return -0.5 * n * (LOG_2PI + math.log(noise.sigma2)) - rss_value / (2.0 * noise.sigma2)


def log_likelihood(theta: MlpParams, phi: TransferFunction, noise: NoiseModel, data: Dataset) -> float:
    """Sample log-likelihood l_n(theta), up to the theta-free input term."""
    if data is None or data.n < 1:
        raise InvalidInputError("log-likelihood of an empty dataset")
    # np.sum reduces pairwise in a fixed order, so the result is reproducible
    return float(np.sum(log_density_term(theta, phi, noise, data.xs, data.ys)))


def plugin_variance(theta: MlpParams, phi: TransferFunction, data: Dataset) -> float:
    """``RSS(theta) / n``, a plug-in estimate of sigma2 for data of unknown noise level.

    The consistency theory assumes sigma2 known; this is a convenience only.
    """
    return rss(theta, phi, data) / data.n


def log_density_ratio(theta, theta0, phi, noise, x, y):
    if theta.d != theta0.d:
        raise InputShapeError(f"theta has d={theta.d}, theta0 has d={theta0.d}")
    noise.check()
    y = np.asarray(y, dtype=float)
    r = y - forward(theta, phi, x)
    r0 = y - forward(theta0, phi, x)
    return (r0 - r) * (r0 + r) / (2.0 * noise.sigma2)


def density_ratio(theta, theta0, phi, noise, x, y):
    """``f_theta(z) / f_theta0(z)``; the input density cancels exactly."""
    return np.exp(log_density_ratio(theta, theta0, phi, noise, x, y))


# ---------------------------------------------------------------------------
# Monte-Carlo L2(f) norms
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloQuadrature:
    """Samples z = (x, y) from the true model for estimating L2(f) norms.

    The sample is drawn once (seeded) and reused, so repeated norm
    estimates with the same quadrature share their noise.
    """

    theta0: MlpParams
    phi: TransferFunction
    noise: NoiseModel
    input: InputDistribution | None = None
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.input is None:
            self.input = InputDistribution("standard_normal", self.theta0.d)
        if self.input.d != self.theta0.d:
            raise InputShapeError("input distribution and theta0 disagree on d")
        self._sample = None

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        if self._sample is None:
            rng = np.random.default_rng(self.seed)
            X = self.input.sample(rng, self.n_samples)
            Y = forward(self.theta0, self.phi, X) + self.noise.sigma * rng.standard_normal(self.n_samples)
            self._sample = (X, Y)
        return self._sample

    def norm(self, func: Callable) -> tuple[float, float]:
        """Estimate ``||func||_2`` and its standard error (delta method)."""
        X, Y = self.sample()
        sq = np.asarray(func(X, Y), dtype=float) ** 2
        mean = float(np.mean(sq))
        est = math.sqrt(mean)
        se_mean = float(np.std(sq, ddof=1)) / math.sqrt(sq.size) if sq.size > 1 else float("inf")
        se = se_mean / (2.0 * est) if est > 0 else se_mean
        return est, se


class ScoreFunction:
    """z -> (f_theta/f(z) - 1) / ||f_theta/f - 1||_2, callable on (x, y)."""

    def __init__(self, theta, theta0, phi, noise, norm, norm_se):
        self.theta, self.theta0 = theta, theta0
        self.phi, self.noise = phi, noise
        self.norm, self.norm_se = norm, norm_se

    def __call__(self, x, y):
        lr = log_density_ratio(self.theta, self.theta0, self.phi, self.noise, x, y)
        return np.expm1(lr) / self.norm


def normalized_score(theta, theta0, phi, noise, quad: MonteCarloQuadrature,
                     tol: float = 1e-10) -> ScoreFunction:
    """Normalized score direction of theta relative to the true parameter theta0.

    Raises
    ------
    DegenerateDirectionError
        If the estimated norm of ``f_theta/f - 1`` is below ``tol``, i.e.
        theta realizes the true regression function.
    """
    noise.check()
    norm, se = quad.norm(
        lambda X, Y: np.expm1(log_density_ratio(theta, theta0, phi, noise, X, Y))
    )
    if not norm >= tol:
        raise DegenerateDirectionError(
            f"||f_theta/f - 1||_2 = {norm:.3g} < {tol:g}: theta realizes the true function"
        )
    return ScoreFunction(theta, theta0, phi, noise, norm, se)


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def write_dataset_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(data.d)] + ["y"])
        for x, y in zip(data.xs, data.ys):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def read_dataset_csv(path) -> Dataset:
    """Read a CSV with header ``x1..xd,y`` (column order is taken from the header)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset file")
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise InvalidInputError(f"{path}: header must contain a 'y' column")
    xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                   key=lambda h: int(h[1:]))
    if not xcols or [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
        raise InvalidInputError(f"{path}: expected input columns x1..xd, got {header}")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric value ({exc})") from None
    if body.size == 0:
        raise InvalidInputError(f"{path}: dataset has no rows")
    idx = {h: i for i, h in enumerate(header)}
    return Dataset(body[:, [idx[h] for h in xcols]], body[:, idx["y"]])
