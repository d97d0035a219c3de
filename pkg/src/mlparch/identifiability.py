"""Numerical counterparts of the identifiability assumptions.

* ``canonicalize`` removes the sign and permutation symmetries of a network
  (positive biases, units sorted), so networks can be compared.
* ``moment_diagnostic`` estimates E||X||^6 and flags an unstable estimate.
* ``gram_test_h3`` checks linear independence of the derivative functions
  of the true units through a Monte-Carlo Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import InputDistribution
from .exceptions import DegenerateFunctionError, InvalidInputError
from .network import Logistic, MlpParams, Tanh, TransferFunction

__all__ = [
    "canonicalize",
    "MomentReport",
    "moment_diagnostic",
    "GramReport",
    "h3_function_count",
    "h3_features",
    "gram_test_h3",
]


def canonicalize(theta: MlpParams, phi: TransferFunction) -> MlpParams:
    """Function-preserving normal form.

    A unit with ``b < 0`` (or ``b == 0`` and first nonzero weight negative)
    is flipped to ``(-a, -b, -w)``. For tanh this uses oddness; for the
    logistic function ``a phi(u) = a - a phi(-u)``, so ``a`` is added to
    beta. Units are then sorted lexicographically by ``(b, w_1, ..., w_d)``.
    """
    if not isinstance(phi, (Tanh, Logistic)):
        raise InvalidInputError(f"no sign symmetry known for {phi!r}")
    beta = theta.beta
    a, b, W = theta.a.copy(), theta.b.copy(), theta.W.copy()
    for i in range(theta.k):
        nz = np.flatnonzero(W[i])
        flip = b[i] < 0 or (b[i] == 0 and nz.size > 0 and W[i, nz[0]] < 0)
        if not flip:
            continue
        if isinstance(phi, Logistic):
            beta += a[i]
        a[i], b[i], W[i] = -a[i], -b[i], -W[i]
    # lexsort sorts by the last key first
    order = np.lexsort(tuple(W[:, j] for j in reversed(range(theta.d))) + (b,))
    return MlpParams(beta, a[order], b[order], W[order])


@dataclass(frozen=True)
class MomentReport:
    value: float
    first_half: float
    second_half: float
    stable: bool

    def __float__(self):
        return self.value


def moment_diagnostic(xs) -> MomentReport:
    """Empirical sixth absolute moment ``mean ||x_t||^6``.

    The estimate is flagged stable when the first-half and second-half
    estimates are within a factor 2 of each other (both zero counts as
    stable; a single observation cannot be split and counts as stable).
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    if xs.shape[0] < 1:
        raise InvalidInputError("moment of an empty sample")
    m6 = np.linalg.norm(xs, axis=1) ** 6
    half = xs.shape[0] // 2
    if half == 0:
        v = float(m6.mean())
        return MomentReport(v, v, v, True)
    h1, h2 = float(m6[:half].mean()), float(m6[half:].mean())
    if h1 == 0.0 and h2 == 0.0:
        stable = True
    elif h1 == 0.0 or h2 == 0.0:
        stable = False
    else:
        stable = 0.5 <= h1 / h2 <= 2.0
    return MomentReport(float(m6.mean()), h1, h2, stable)


def h3_function_count(k0: int, d: int) -> int:
    return k0 * (d * (d + 1) // 2 + 1 + d + 1)


def h3_features(theta0: MlpParams, phi: TransferFunction, X: np.ndarray):
    """Evaluate the derivative-function family of every true unit at X.

    Per unit, in order: ``x_k x_l phi''(u)`` for ``1 <= l <= k <= d``,
    ``phi''(u)``, ``x_k phi'(u)`` for ``k = 1..d``, ``phi'(u)``, where
    ``u = b0 + w0 . x``. Returns (features (n, m), labels).
    """
    d = theta0.d
    U = X @ theta0.W.T + theta0.b
    D1, D2 = phi.d1(U), phi.d2(U)
    cols, labels = [], []
    for i in range(theta0.k):
        for kk in range(d):
            for ll in range(kk + 1):
                cols.append(X[:, kk] * X[:, ll] * D2[:, i])
                labels.append(f"u{i + 1}:x{kk + 1}x{ll + 1}*phi''")
        cols.append(D2[:, i])
        labels.append(f"u{i + 1}:phi''")
        for kk in range(d):
            cols.append(X[:, kk] * D1[:, i])
            labels.append(f"u{i + 1}:x{kk + 1}*phi'")
        cols.append(D1[:, i])
        labels.append(f"u{i + 1}:phi'")
    return np.column_stack(cols), labels


@dataclass
class GramReport:
    """Normalized Gram matrix of the derivative functions and its spectrum."""

    matrix: np.ndarray
    min_eigenvalue: float
    function_count: int
    mc_samples: int
    seed: int
    min_eigenvalue_se: float = float("nan")
    threshold: float = 1e-3
    labels: list | None = None

    @property
    def supported(self) -> bool:
        """True when the minimum eigenvalue clears the threshold."""
        return self.min_eigenvalue > self.threshold

    def to_dict(self) -> dict:
        return {
            "min_eigenvalue": self.min_eigenvalue,
            "min_eigenvalue_se": self.min_eigenvalue_se,
            "threshold": self.threshold,
            "supported": self.supported,
            "function_count": self.function_count,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "labels": self.labels,
            "matrix": self.matrix.tolist(),
        }


def _normalized_min_eig(S: np.ndarray, count: int) -> float:
    G = S / count
    scale = np.sqrt(np.diag(G))
    C = G / np.outer(scale, scale)
    C = 0.5 * (C + C.T)
    return float(np.linalg.eigvalsh(C)[0])


def gram_test_h3(theta0: MlpParams, phi: TransferFunction,
                 input_sampler: InputDistribution | None = None,
                 mc_samples: int = 100_000, seed: int = 0, threshold: float = 1e-3,
                 jackknife_groups: int = 20) -> GramReport:
    """Monte-Carlo test of linear independence in L2(q).

    Inner products are averages over ``mc_samples`` inputs drawn from
    ``input_sampler``; each function is scaled to unit estimated norm
    before the minimum eigenvalue is taken. The standard error of that
    eigenvalue comes from a delete-one-group jackknife.

    Raises
    ------
    DegenerateFunctionError
        A family member has estimated norm below 1e-12.
    """
    if mc_samples < 2:
        raise InvalidInputError("mc_samples must be >= 2")
    if input_sampler is None:
        input_sampler = InputDistribution("standard_normal", theta0.d)
    if input_sampler.d != theta0.d:
        raise InvalidInputError("input distribution and theta0 disagree on d")
    rng = np.random.default_rng(seed)
    X = input_sampler.sample(rng, mc_samples)
    F, labels = h3_features(theta0, phi, X)
    norms = np.sqrt(np.mean(F * F, axis=0))
    bad = np.flatnonzero(~(norms >= 1e-12))
    if bad.size:
        raise DegenerateFunctionError(
            f"functions {[labels[i] for i in bad]} have estimated norm < 1e-12"
        )
    S = F.T @ F
    G = S / mc_samples
    C = G / np.outer(norms, norms)
    C = 0.5 * (C + C.T)
    lam = float(np.linalg.eigvalsh(C)[0])

    g = max(2, min(jackknife_groups, mc_samples))
    bounds = np.linspace(0, mc_samples, g + 1).astype(int)
    loo = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        Fg = F[lo:hi]
        loo.append(_normalized_min_eig(S - Fg.T @ Fg, mc_samples - (hi - lo)))
    loo = np.array(loo)
    se = math.sqrt((g - 1) / g * float(np.sum((loo - loo.mean()) ** 2)))

    return GramReport(C, lam, h3_function_count(theta0.k, theta0.d), mc_samples, seed,
                      se, threshold, labels)
