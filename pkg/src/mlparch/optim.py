"""Constrained maximum-likelihood fitting over the compact parameter set.

For fixed noise variance the Gaussian MLE is the least-squares estimate,
so ``fit_mle`` minimizes the residual sum of squares over

    {theta : every coordinate in [-B, B], ||w_i||_2 >= eta for all i}

with a multistart projected Levenberg-Marquardt iteration: a Gauss-Newton
step with Marquardt diagonal scaling, followed by projection onto the set,
accepted only if the RSS does not increase.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InputShapeError, InvalidInputError, OptimizationError
from .likelihood import Dataset, NoiseModel, loglik_from_rss
from .network import MlpParams, TransferFunction, n_params

__all__ = [
    "ParamSpace",
    "FitConfig",
    "FitResult",
    "BoundaryWarning",
    "project",
    "embed",
    "fit_mle",
]


class BoundaryWarning(UserWarning):
    """A fitted coordinate lies next to the box bound; theta0 may lie outside the box."""


@dataclass(frozen=True)
class ParamSpace:
    """The compact set Theta_k for ``k`` units and ``d`` inputs."""

    k: int
    d: int
    box_bound: float = 20.0
    eta: float = 0.1

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise InvalidInputError(f"need k >= 1 and d >= 1, got k={self.k}, d={self.d}")
        if not (self.box_bound > 0 and self.eta > 0):
            raise InvalidInputError("box_bound and eta must be positive")
        if not self.eta < self.box_bound * math.sqrt(self.d):
            raise InvalidInputError(
                f"eta={self.eta} >= B*sqrt(d)={self.box_bound * math.sqrt(self.d)}: empty set"
            )

    @property
    def dim(self) -> int:
        return n_params(self.k, self.d)

    def with_k(self, k: int) -> "ParamSpace":
        return replace(self, k=k)

    def contains(self, theta: MlpParams) -> bool:
        """Membership predicate: box bound on every coordinate and ``||w_i|| >= eta``."""
        if theta.k != self.k or theta.d != self.d:
            return False
        flat = theta.to_flat()
        if not np.all(np.abs(flat) <= self.box_bound):
            return False
        return bool(np.all(np.linalg.norm(theta.W, axis=1) >= self.eta))


@dataclass(frozen=True)
class FitConfig:
    """Multistart settings.

    ``ftol`` stops a start once an accepted step lowers the RSS by less than
    ``ftol * RSS``; overparameterized fits otherwise crawl along flat
    directions until ``max_iters``.
    """

    restarts: int = 20
    max_iters: int = 5000
    grad_tol: float = 1e-8
    init_scale: float = 2.0
    seed: int = 0
    ftol: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1:
            raise InvalidInputError("restarts must be >= 1")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not (self.grad_tol > 0 and self.ftol >= 0 and self.init_scale > 0):
            raise InvalidInputError("tolerances and init_scale must be positive")


@dataclass
class FitResult:
    theta_hat: MlpParams
    loglik: float
    rss: float
    converged_restarts: int
    best_restart_index: int
    restart_rss: list = field(default_factory=list)
    n_iters: int = 0
    near_boundary: bool = False


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _project_w(w: np.ndarray, B: float, eta: float) -> np.ndarray:
    norm = np.linalg.norm(w)
    if norm >= eta:
        return w
    if norm == 0.0:
        w = np.zeros_like(w)
        w[0] = eta
    else:
        w = w * (eta / norm)
        # rounding can leave the norm an ulp short of eta
        while np.linalg.norm(w) < eta:
            w = w * (1.0 + 2.0**-52)
    if eta <= B:
        return w
    # eta > B: saturate coordinates at +-B and spread the remaining norm
    clipped = np.zeros(w.shape, dtype=bool)
    for _ in range(w.size):
        over = np.abs(w) > B
        if not over.any():
            break
        clipped |= over
        w[clipped] = np.sign(w[clipped]) * B
        need = eta**2 - np.sum(w[clipped] ** 2)
        free = ~clipped
        fn = np.linalg.norm(w[free])
        if need <= 0 or not free.any():
            break
        if fn == 0.0:
            w[np.flatnonzero(free)[0]] = math.sqrt(need)
        else:
            w[free] *= math.sqrt(need) / fn
    return w


def _project_flat(flat: np.ndarray, k: int, d: int, B: float, eta: float) -> np.ndarray:
    out = np.clip(flat, -B, B)
    W = out[1 + 2 * k :].reshape(k, d)
    norms = np.linalg.norm(W, axis=1)
    for i in np.flatnonzero(norms < eta):
        W[i] = _project_w(W[i].copy(), B, eta)
    return out


def project(theta: MlpParams, space: ParamSpace) -> MlpParams:
    """Map theta into Theta_k.

    Clip every coordinate to [-B, B], then rescale each ``w_i`` with
    ``||w_i|| < eta`` radially to norm ``eta`` (``w_i = 0`` maps to
    ``eta * e_1``). Idempotent on the set.
    """
    if theta.k != space.k or theta.d != space.d:
        raise InputShapeError(
            f"theta has (k, d)=({theta.k}, {theta.d}), space has ({space.k}, {space.d})"
        )
    flat = _project_flat(theta.to_flat(), space.k, space.d, space.box_bound, space.eta)
    return MlpParams.from_flat(flat, space.k, space.d)


def embed(theta: MlpParams, space: ParamSpace) -> MlpParams:
    """Embed a k-unit network into Theta_{k'} (k' >= k) without changing the function.

    Each added unit has output weight 0, bias 0 and ``w = eta * e_1``.
    """
    extra = space.k - theta.k
    if extra < 0 or theta.d != space.d:
        raise InputShapeError(f"cannot embed k={theta.k} into k'={space.k}")
    W_new = np.zeros((extra, space.d))
    W_new[:, 0] = space.eta
    return MlpParams(
        theta.beta,
        np.concatenate((theta.a, np.zeros(extra))),
        np.concatenate((theta.b, np.zeros(extra))),
        np.vstack((theta.W, W_new)),
    )


# ---------------------------------------------------------------------------
# Projected Levenberg-Marquardt
# ---------------------------------------------------------------------------


class _Problem:
    """Flat-vector residual and Jacobian for one dataset."""

    def __init__(self, space: ParamSpace, phi: TransferFunction, data: Dataset):
        self.k, self.d = space.k, space.d
        self.B, self.eta = space.box_bound, space.eta
        self.phi = phi
        self.X = np.ascontiguousarray(data.xs)
        self.y = data.ys
        self.n = data.n

    def unpack(self, flat):
        k = self.k
        return flat[0], flat[1 : 1 + k], flat[1 + k : 1 + 2 * k], flat[1 + 2 * k :].reshape(k, self.d)

    def residual(self, flat):
        beta, a, b, W = self.unpack(flat)
        return self.y - beta - self.phi.value(self.X @ W.T + b) @ a

    def residual_jacobian(self, flat):
        beta, a, b, W = self.unpack(flat)
        k, n = self.k, self.n
        Z = self.X @ W.T + b
        P = self.phi.value(Z)
        aD1 = self.phi.d1(Z) * a
        J = np.empty((n, 1 + 2 * k + k * self.d))
        J[:, 0] = 1.0
        J[:, 1 : 1 + k] = P
        J[:, 1 + k : 1 + 2 * k] = aD1
        J[:, 1 + 2 * k :] = (aD1[:, :, None] * self.X[:, None, :]).reshape(n, -1)
        return self.y - beta - P @ a, J

    def project(self, flat):
        return _project_flat(flat, self.k, self.d, self.B, self.eta)


@dataclass
class _StartResult:
    flat: np.ndarray
    rss: float
    iters: int
    reason: str
    trace: list | None = None

    @property
    def converged(self) -> bool:
        return self.reason in ("grad_tol", "ftol", "zero_rss")


def _run_start(prob: _Problem, flat0: np.ndarray, cfg: FitConfig, record_trace=False) -> _StartResult:
    theta = prob.project(np.asarray(flat0, dtype=float))
    r, J = prob.residual_jacobian(theta)
    f = float(r @ r)
    trace = [f] if record_trace else None
    if not np.isfinite(f):
        return _StartResult(theta, f, 0, "nonfinite", trace)
    lam = 1e-3
    reason = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if f == 0.0:
            reason = "zero_rss"
            break
        g = J.T @ r  # minus half the RSS gradient
        pg = theta - prob.project(theta + (2.0 / prob.n) * g)
        if np.linalg.norm(pg) < cfg.grad_tol:
            reason = "grad_tol"
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(1.0, float(diag.max())))
        accepted = False
        while lam <= 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            trial = prob.project(theta + step)
            r_t = prob.residual(trial)
            f_t = float(r_t @ r_t)
            if np.isfinite(f_t) and f_t <= f:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            reason = "stalled"
            break
        decrease = f - f_t
        theta = trial
        f = f_t
        lam = max(lam / 3.0, 1e-12)
        if record_trace:
            trace.append(f)
        if decrease <= cfg.ftol * f:
            reason = "ftol"
            break
        r, J = prob.residual_jacobian(theta)
    return _StartResult(theta, f, it, reason, trace)


def _initial_points(space: ParamSpace, cfg: FitConfig, init):
    starts = []
    for theta in init or ():
        if theta.k != space.k or theta.d != space.d:
            raise InputShapeError("warm start does not match the parameter space")
        starts.append(theta.to_flat())
    for r in range(cfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
        starts.append(rng.uniform(-cfg.init_scale, cfg.init_scale, size=space.dim))
    return starts


def fit_mle(space: ParamSpace, phi: TransferFunction, noise: NoiseModel, data: Dataset,
            cfg: FitConfig | None = None, init=None, n_jobs: int = 1,
            record_trace: bool = False) -> FitResult:
    """Maximize the Gaussian log-likelihood over Theta_k.

    Parameters
    ----------
    space : ParamSpace
    phi : TransferFunction
    noise : NoiseModel
        Known noise variance; only enters the reported log-likelihood.
    data : Dataset
    cfg : FitConfig, optional
    init : sequence of MlpParams, optional
        Warm starts, run before the ``cfg.restarts`` random starts and
        indexed first. Random start ``r`` draws every coordinate from
        U(-init_scale, init_scale) with a generator seeded by ``(seed, r)``.
    n_jobs : int
        Threads across starts. The reduction is order independent: highest
        log-likelihood wins, ties go to the lowest start index.

    Raises
    ------
    OptimizationError
        If every start produces a non-finite loss.
    """
    cfg = cfg or FitConfig()
    noise.check()
    if data is None or data.n < 1:
        raise InvalidInputError("cannot fit an empty dataset")
    if data.d != space.d:
        raise InputShapeError(f"data has d={data.d}, space has d={space.d}")
    prob = _Problem(space, phi, data)
    starts = _initial_points(space, cfg, init)
    run = lambda s: _run_start(prob, s, cfg, record_trace)  # noqa: E731
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]

    finite = [i for i, res in enumerate(results) if np.isfinite(res.rss)]
    if not finite:
        raise OptimizationError(
            f"all {len(results)} starts diverged for k={space.k}",
            diagnostics={i: (res.rss, res.iters, res.reason) for i, res in enumerate(results)},
            k=space.k,
        )
    best = min(finite, key=lambda i: (results[i].rss, i))
    res = results[best]
    theta_hat = MlpParams.from_flat(res.flat, space.k, space.d)
    near = bool(np.any(np.abs(res.flat) >= space.box_bound * (1 - 1e-3)))
    if near:
        warnings.warn(
            f"fitted coordinate within 1e-3*B of the box bound B={space.box_bound}; "
            "the true parameter may lie outside the box",
            BoundaryWarning,
            stacklevel=2,
        )
    out = FitResult(
        theta_hat=theta_hat,
        loglik=loglik_from_rss(res.rss, data.n, noise),
        rss=res.rss,
        converged_restarts=sum(r.converged for r in results),
        best_restart_index=best,
        restart_rss=[r.rss for r in results],
        n_iters=sum(r.iters for r in results),
        near_boundary=near,
    )
    if record_trace:
        out.traces = [r.trace for r in results]
    return out
