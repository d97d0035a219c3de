"""Locally conic reparameterization around a true network and the
second-order expansion of the likelihood ratio.

Given a fitted network theta with k units near a true network theta0 with
k0 <= k units, the units of theta are grouped into clusters, one per true
unit (units whose (b_j, w_j) sit near (b0_i, w0_i)), followed by the
unmatched units. With T the number of clustered units, theta is rewritten
as theta = (Phi_t, psi_t) where

    Phi_t = (beta, b_1..b_T, w_1..w_T, s_1..s_k0, a_{T+1}..a_k)
    psi_t = (q_1..q_T, b_{T+1}..b_k, w_{T+1}..w_k)

with s_i = sum_{j in cluster i} a_j - a0_i and q_j = a_j / sum_{cluster} a.
The network realizes F_theta0 exactly when Phi_t equals the reference
point Phi_t^0 built by ``phi0_reference``, whatever the value of psi_t.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AmbiguousClusteringError,
    InputShapeError,
    InvalidDecompositionError,
)
from .likelihood import MonteCarloQuadrature, NoiseModel, log_density_ratio
from .network import MlpParams, TransferFunction, forward

__all__ = [
    "ReparamDecomposition",
    "ExpansionTerms",
    "decompose",
    "reconstruct",
    "phi0_reference",
    "expansion_terms",
    "DEFAULT_CLUSTER_TOL",
]

#: 0.05 * eta for the default eta = 0.1
DEFAULT_CLUSTER_TOL = 0.005


def _cluster_index(t) -> np.ndarray:
    """Cluster label of each of the first t[-1] positions."""
    sizes = np.diff(np.concatenate(([0], t)))
    return np.repeat(np.arange(len(t)), sizes)


@dataclass(frozen=True, eq=False)
class ReparamDecomposition:
    """theta expressed as (Phi_t, psi_t) relative to ``theta0``.

    ``perm[p]`` is the original index of the unit placed at position p.
    """

    t: tuple
    perm: np.ndarray
    phi_t: np.ndarray
    psi_t: np.ndarray
    theta0: MlpParams
    k: int

    @property
    def k0(self) -> int:
        return len(self.t)

    @property
    def d(self) -> int:
        return self.theta0.d

    @property
    def n_clustered(self) -> int:
        return int(self.t[-1])

    @property
    def cluster_of(self) -> np.ndarray:
        return _cluster_index(self.t)

    def phi_parts(self):
        """(beta, b (T,), W (T, d), s (k0,), a_extra (k - T,))."""
        T, d, k0 = self.n_clustered, self.d, self.k0
        p = self.phi_t
        return (
            p[0],
            p[1 : 1 + T],
            p[1 + T : 1 + T + T * d].reshape(T, d),
            p[1 + T + T * d : 1 + T + T * d + k0],
            p[1 + T + T * d + k0 :],
        )

    def psi_parts(self):
        """(q (T,), b_extra (k - T,), W_extra (k - T, d))."""
        T, d, m = self.n_clustered, self.d, self.k - self.n_clustered
        p = self.psi_t
        return p[:T], p[T : T + m], p[T + m :].reshape(m, d)

    def with_phi(self, phi_t) -> "ReparamDecomposition":
        phi_t = np.asarray(phi_t, dtype=float)
        if phi_t.shape != self.phi_t.shape:
            raise InputShapeError(f"Phi_t has shape {phi_t.shape}, expected {self.phi_t.shape}")
        return ReparamDecomposition(self.t, self.perm, phi_t, self.psi_t, self.theta0, self.k)

    def with_psi(self, psi_t) -> "ReparamDecomposition":
        psi_t = np.asarray(psi_t, dtype=float)
        if psi_t.shape != self.psi_t.shape:
            raise InputShapeError(f"psi_t has shape {psi_t.shape}, expected {self.psi_t.shape}")
        return ReparamDecomposition(self.t, self.perm, self.phi_t, psi_t, self.theta0, self.k)

    def phi0(self) -> np.ndarray:
        return phi0_reference(self.theta0, self.t, self.k)


def _check_dims(dec: ReparamDecomposition) -> None:
    T, k, d, k0 = dec.n_clustered, dec.k, dec.d, dec.k0
    ok = (
        dec.phi_t.size == 1 + T * (1 + d) + k0 + (k - T)
        and dec.psi_t.size == T + (k - T) * (1 + d)
        # the k0 constraints sum(q) = 1 account for the surplus over dim(theta)
        and dec.phi_t.size + dec.psi_t.size == 2 * k + 1 + k * d + k0
    )
    if not ok:
        raise InvalidDecompositionError(
            f"dimension bookkeeping failed: |Phi_t|={dec.phi_t.size}, |psi_t|={dec.psi_t.size}"
        )


def decompose(theta: MlpParams, theta0: MlpParams,
              cluster_tol: float = DEFAULT_CLUSTER_TOL) -> ReparamDecomposition:
    """Cluster the units of theta around those of theta0 and reparameterize.

    Units whose location (b_j, w_j) lies within ``cluster_tol`` (Euclidean)
    of a true location (b0_i, w0_i) join cluster i; clusters are laid out
    contiguously in true-unit order, keeping the original relative order
    inside each cluster, and unmatched units go last.

    Raises
    ------
    AmbiguousClusteringError
        Two true units are closer than ``2 * cluster_tol``.
    InvalidDecompositionError
        A true unit has no matching unit, or a cluster's output weights
        cancel to zero while not all being zero.
    """
    if theta.d != theta0.d:
        raise InputShapeError(f"theta has d={theta.d}, theta0 has d={theta0.d}")
    k, k0, d = theta.k, theta0.k, theta.d
    if k < k0:
        raise InvalidDecompositionError(f"theta has k={k} < k0={k0} units")
    loc0 = np.column_stack((theta0.b, theta0.W))
    loc = np.column_stack((theta.b, theta.W))
    if k0 > 1:
        sep = np.linalg.norm(loc0[:, None, :] - loc0[None, :, :], axis=2)
        sep[np.diag_indices(k0)] = np.inf
        if sep.min() < 2 * cluster_tol:
            raise AmbiguousClusteringError(
                f"true units {np.unravel_index(sep.argmin(), sep.shape)} are "
                f"{sep.min():.3g} apart, below 2*cluster_tol={2 * cluster_tol:g}"
            )
    dist = np.linalg.norm(loc[:, None, :] - loc0[None, :, :], axis=2)
    assign = np.full(k, -1)
    for j in range(k):
        near = np.flatnonzero(dist[j] <= cluster_tol)
        if near.size > 1:
            warnings.warn(
                f"unit {j} is within cluster_tol of true units {near.tolist()}; "
                "assigning it to the nearest",
                stacklevel=2,
            )
        if near.size:
            assign[j] = int(near[np.argmin(dist[j, near])])

    clusters = [np.flatnonzero(assign == i) for i in range(k0)]
    empty = [i for i, c in enumerate(clusters) if c.size == 0]
    if empty:
        raise InvalidDecompositionError(
            f"no unit of theta lies within cluster_tol={cluster_tol:g} of true units {empty}"
        )
    perm = np.concatenate(clusters + [np.flatnonzero(assign < 0)])
    t = tuple(int(v) for v in np.cumsum([c.size for c in clusters]))
    T = t[-1]

    th = theta.permute(perm)
    s = np.empty(k0)
    q = np.empty(T)
    start = 0
    for i, stop in enumerate(t):
        a_c = th.a[start:stop]
        total = a_c.sum()
        s[i] = total - theta0.a[i]
        if total != 0.0:
            q[start:stop] = a_c / total
        elif np.all(a_c == 0.0):
            q[start:stop] = 1.0 / (stop - start)
        else:
            raise InvalidDecompositionError(
                f"output weights of cluster {i} cancel to zero; proportions undefined"
            )
        start = stop

    phi_t = np.concatenate(([th.beta], th.b[:T], th.W[:T].ravel(), s, th.a[T:]))
    psi_t = np.concatenate((q, th.b[T:], th.W[T:].ravel()))
    dec = ReparamDecomposition(t, perm, phi_t, psi_t, theta0, k)
    _check_dims(dec)
    return dec


def reconstruct(dec: ReparamDecomposition, original_order: bool = True) -> MlpParams:
    """Map (Phi_t, psi_t) back to a network.

    Output weights are ``a_j = q_j * (s_i + a0_i)`` inside cluster i. With
    ``original_order`` the decomposition's permutation is undone.
    """
    beta, b_c, W_c, s, a_ex = dec.phi_parts()
    q, b_ex, W_ex = dec.psi_parts()
    ci = dec.cluster_of
    sums = np.bincount(ci, weights=q, minlength=dec.k0)
    scale = np.maximum(1.0, np.bincount(ci, weights=np.abs(q), minlength=dec.k0))
    if np.any(np.abs(sums - 1.0) > 1e-12 * scale):
        raise InvalidDecompositionError(f"cluster proportions sum to {sums.tolist()}, not 1")
    a_c = q * (s + dec.theta0.a)[ci]
    theta = MlpParams(
        beta,
        np.concatenate((a_c, a_ex)),
        np.concatenate((b_c, b_ex)),
        np.vstack((W_c, W_ex)),
    )
    if original_order:
        theta = theta.permute(np.argsort(dec.perm))
    return theta


def phi0_reference(theta0: MlpParams, t, k: int) -> np.ndarray:
    """Reference point Phi_t^0: true biases and weights repeated per cluster,
    zeros in the k0 s-slots and in the k - t[-1] extra-output slots."""
    t = tuple(int(v) for v in t)
    if len(t) != theta0.k or any(b <= a for a, b in zip((0,) + t, t)) or t[-1] > k:
        raise InvalidDecompositionError(f"t={t} is not valid for k0={theta0.k}, k={k}")
    ci = _cluster_index(t)
    return np.concatenate((
        [theta0.beta],
        theta0.b[ci],
        theta0.W[ci].ravel(),
        np.zeros(theta0.k),
        np.zeros(k - t[-1]),
    ))


@dataclass
class ExpansionTerms:
    """Pieces of the expansion of f_theta/f at observations z.

    ``first`` and ``second`` are the linear and quadratic terms (arrays over
    the observations); ``ratio_exact`` is f_theta/f itself and
    ``ratio_minus_one`` the same minus one, computed without cancellation.
    ``D`` is the Monte-Carlo L2(f) norm of f_theta/f - 1 and ``D_se`` its
    standard error.
    """

    first: np.ndarray
    second: np.ndarray
    D: float
    ratio_exact: np.ndarray
    ratio_minus_one: np.ndarray
    D_se: float = 0.0

    @property
    def remainder(self) -> np.ndarray:
        return self.ratio_minus_one - self.first - 0.5 * self.second


def expansion_terms(dec: ReparamDecomposition, theta0: MlpParams, phi: TransferFunction,
                    noise: NoiseModel, z, quad: MonteCarloQuadrature | None = None,
                    ) -> ExpansionTerms:
    """First- and second-order terms of f_theta/f around Phi_t^0 at fixed psi_t.

    Write ``u_i = b0_i + w0_i . x``, ``e = (y - F_theta0(x)) / sigma2`` and,
    for a clustered unit j of cluster i, ``delta_j = (b_j - b0_i) + (w_j - w0_i) . x``.
    With

        L = beta - beta0 + sum_i s_i phi(u_i)
            + sum_j q_j a0_i phi'(u_i) delta_j
            + sum_{j unmatched} a_j phi(b_j + w_j . x)

    the terms are ``first = e L`` and

        second = (e^2 - 1/sigma2) L^2
                 + e sum_j [ q_j a0_i phi''(u_i) delta_j^2 + 2 s_i q_j phi'(u_i) delta_j ],

    the exact directional derivatives of the Gaussian ratio along
    Phi_t - Phi_t^0.

    ``z`` is a pair ``(x, y)`` with x of shape (m, d) (or (d,)) and y of
    shape (m,) (or scalar).
    """
    if dec.theta0 is not theta0 and dec.theta0 != theta0:
        raise InvalidDecompositionError("decomposition was built for a different theta0")
    noise.check()
    x, y = z
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1
    X = X.reshape(-1, theta0.d)
    Y = np.atleast_1d(np.asarray(y, dtype=float))

    beta, b_c, W_c, s, a_ex = dec.phi_parts()
    q, b_ex, W_ex = dec.psi_parts()
    ci = dec.cluster_of
    a0 = theta0.a

    U0 = X @ theta0.W.T + theta0.b            # (m, k0)
    P0, D1, D2 = phi.value(U0), phi.d1(U0), phi.d2(U0)
    delta = (b_c - theta0.b[ci]) + X @ (W_c - theta0.W[ci]).T   # (m, T)
    L = (beta - theta0.beta) + P0 @ s + (D1[:, ci] * delta) @ (q * a0[ci])
    if a_ex.size:
        L = L + phi.value(X @ W_ex.T + b_ex) @ a_ex
    e = (Y - forward(theta0, phi, X)) / noise.sigma2
    Q = (D2[:, ci] * delta**2) @ (q * a0[ci]) + 2.0 * (D1[:, ci] * delta) @ (q * s[ci])
    first = e * L
    second = (e * e - 1.0 / noise.sigma2) * L * L + e * Q

    theta = reconstruct(dec, original_order=False)
    lr = log_density_ratio(theta, theta0, phi, noise, X, Y)
    if quad is None:
        quad = MonteCarloQuadrature(theta0, phi, noise)
    D, D_se = quad.norm(lambda Xs, Ys: np.expm1(log_density_ratio(theta, theta0, phi, noise, Xs, Ys)))

    out = ExpansionTerms(first, second, D, np.exp(lr), np.expm1(lr), D_se)
    if single:
        out.first, out.second = float(first[0]), float(second[0])
        out.ratio_exact, out.ratio_minus_one = float(out.ratio_exact[0]), float(out.ratio_minus_one[0])
    return out
