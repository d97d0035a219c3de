"""Penalized-likelihood choice of the number of hidden units.

``T_n(k) = max_{Theta_k} l_n - p_n(k)`` and the estimate ``k_hat`` is its
argmax over ``k = 1..M``. A penalty yields a consistent estimate when it
increases in k, the gap ``p_n(k1) - p_n(k2)`` (k1 > k2) diverges with n,
and ``p_n(k) / n -> 0``; ``check_h4`` tests these three conditions on a
finite grid of sample sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InvalidInputError, OptimizationError
from .likelihood import Dataset, NoiseModel, loglik_from_rss
from .network import TransferFunction, n_params
from .optim import FitConfig, FitResult, ParamSpace, embed, fit_mle

__all__ = [
    "Penalty",
    "penalty_value",
    "H4Report",
    "check_h4",
    "SelectionResult",
    "select_architecture",
]

# T_n values closer than this to the maximum count as ties (-> smallest k)
TIE_TOL = 1e-9


@dataclass(frozen=True)
class Penalty:
    """Penalty ``p_n(k)`` on the maximized log-likelihood.

    kinds
    -----
    ``bic``     ``dim_k / 2 * ln n`` with ``dim_k = 2k + 1 + k*d``
    ``aic``     ``dim_k`` (constant in n, so it is not consistent)
    ``power``   ``c * k * n**alpha``
    ``custom``  ``func(k, n, d)``
    """

    kind: str = "bic"
    c: float = 1.0
    alpha: float = 0.5
    func: Callable[[int, int, int], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("bic", "aic", "power", "custom"):
            raise InvalidInputError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise InvalidInputError("custom penalty requires func(k, n, d)")

    @classmethod
    def parse(cls, text: str) -> "Penalty":
        """Parse ``"bic"``, ``"aic"`` or ``"power:c:alpha"``."""
        parts = str(text).strip().lower().split(":")
        if parts[0] in ("bic", "aic") and len(parts) == 1:
            return cls(parts[0])
        if parts[0] == "power" and len(parts) == 3:
            try:
                return cls("power", c=float(parts[1]), alpha=float(parts[2]))
            except ValueError:
                pass
        raise InvalidInputError(f"cannot parse penalty {text!r}")

    def __str__(self):
        if self.kind == "power":
            return f"power:{self.c!r}:{self.alpha!r}"
        return self.kind


def penalty_value(pen: Penalty, k: int, n: int, d: int) -> float:
    if n < 1:
        raise InvalidInputError(f"penalty needs n >= 1, got n={n}")
    if k < 1 or d < 1:
        raise InvalidInputError(f"penalty needs k >= 1 and d >= 1, got k={k}, d={d}")
    if pen.kind == "bic":
        return n_params(k, d) / 2.0 * math.log(n)
    if pen.kind == "aic":
        return float(n_params(k, d))
    if pen.kind == "power":
        return pen.c * k * float(n) ** pen.alpha
    return float(pen.func(k, n, d))


@dataclass
class H4Report:
    """Outcome per condition; a failed condition carries its first counterexample."""

    increasing_in_k: bool
    gap_diverges: bool
    vanishing_rate: bool
    counterexamples: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.increasing_in_k and self.gap_diverges and self.vanishing_rate

    def to_dict(self) -> dict:
        return {
            "increasing_in_k": self.increasing_in_k,
            "gap_diverges": self.gap_diverges,
            "vanishing_rate": self.vanishing_rate,
            "passed": self.passed,
            "counterexamples": self.counterexamples,
        }


def check_h4(pen: Penalty, k_max: int, n_grid, d: int) -> H4Report:
    """Check the three consistency conditions on a grid of sample sizes.

    (i) ``p_n(k)`` strictly increasing in k for each n; (ii) for every
    ``k1 > k2`` the gap ``p_n(k1) - p_n(k2)`` strictly increases along the
    grid; (iii) ``p_n(k) / n`` strictly decreases along the grid.
    """
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise InvalidInputError("n_grid must be strictly increasing")
    ks = range(1, k_max + 1)
    P = np.array([[penalty_value(pen, k, n, d) for n in n_grid] for k in ks])
    cex = {}

    ok1 = True
    for j, n in enumerate(n_grid):
        for k in range(1, k_max):
            if not P[k, j] > P[k - 1, j]:
                ok1 = False
                cex["increasing_in_k"] = {"n": n, "k": k, "p_k": P[k - 1, j], "p_k+1": P[k, j]}
                break
        if not ok1:
            break

    ok2 = True
    for k1 in range(2, k_max + 1):
        for k2 in range(1, k1):
            gap = P[k1 - 1] - P[k2 - 1]
            bad = np.flatnonzero(np.diff(gap) <= 0)
            if bad.size:
                j = int(bad[0])
                ok2 = False
                cex["gap_diverges"] = {
                    "k1": k1, "k2": k2,
                    "n_from": n_grid[j], "n_to": n_grid[j + 1],
                    "gap_from": float(gap[j]), "gap_to": float(gap[j + 1]),
                }
                break
        if not ok2:
            break

    ok3 = True
    rate = P / np.asarray(n_grid, dtype=float)
    for k in ks:
        bad = np.flatnonzero(np.diff(rate[k - 1]) >= 0)
        if bad.size:
            j = int(bad[0])
            ok3 = False
            cex["vanishing_rate"] = {
                "k": k, "n_from": n_grid[j], "n_to": n_grid[j + 1],
                "rate_from": float(rate[k - 1, j]), "rate_to": float(rate[k - 1, j + 1]),
            }
            break

    return H4Report(ok1, ok2, ok3, cex)


@dataclass
class SelectionResult:
    """Per-k rows ``(k, loglik_max, penalty, T_n)``, the argmax and the fits."""

    per_k: list
    k_hat: int
    fits: list
    n: int = 0
    d: int = 0
    penalty: Penalty | None = None

    @property
    def still_increasing(self) -> bool:
        """True when T_n is still increasing at k = M (M may be too small)."""
        T = [row[3] for row in self.per_k]
        return len(T) >= 2 and T[-1] > T[-2]

    def rescore(self, noise: NoiseModel) -> "SelectionResult":
        """Recompute the rows for another noise variance, keeping the fits."""
        rows = []
        for (k, _, pen, _), fit in zip(self.per_k, self.fits):
            ll = loglik_from_rss(fit.rss, self.n, noise)
            rows.append((k, ll, pen, ll - pen))
        return SelectionResult(rows, _argmax_k(rows), self.fits, self.n, self.d, self.penalty)

    def to_dict(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "n": self.n,
            "d": self.d,
            "penalty": str(self.penalty) if self.penalty is not None else None,
            "still_increasing_at_M": self.still_increasing,
            "rows": [
                {"k": k, "loglik": ll, "penalty": p, "T_n": t} for k, ll, p, t in self.per_k
            ],
        }


def _argmax_k(rows) -> int:
    T = np.array([r[3] for r in rows])
    best = T.max()
    return int(rows[int(np.flatnonzero(T >= best - TIE_TOL)[0])][0])


def select_architecture(data: Dataset, M: int, pen: Penalty, phi: TransferFunction,
                        noise: NoiseModel, cfg: FitConfig | None = None,
                        box_bound: float = 20.0, eta: float = 0.1,
                        warm_start: bool = True, n_jobs: int = 1) -> SelectionResult:
    """Fit k = 1..M units and return the penalized-likelihood argmax.

    With ``warm_start`` (default) the k-unit fit also starts from the
    (k-1)-unit optimum plus a silent unit, so the maximized log-likelihood
    is nondecreasing in k. ``warm_start=False`` fits each k independently.

    Raises
    ------
    OptimizationError
        Re-raised from the failing fit, with ``k`` set.
    """
    if M < 1:
        raise InvalidInputError(f"M must be >= 1, got {M}")
    if data is None or data.n < 1:
        raise InvalidInputError("cannot select on an empty dataset")
    cfg = cfg or FitConfig()
    rows, fits = [], []
    prev: FitResult | None = None
    for k in range(1, M + 1):
        space = ParamSpace(k, data.d, box_bound, eta)
        init = [embed(prev.theta_hat, space)] if (warm_start and prev is not None) else None
        try:
            fit = fit_mle(space, phi, noise, data, cfg, init=init, n_jobs=n_jobs)
        except OptimizationError as exc:
            exc.k = k
            raise
        p = penalty_value(pen, k, data.n, data.d)
        rows.append((k, fit.loglik, p, fit.loglik - p))
        fits.append(fit)
        prev = fit
    return SelectionResult(rows, _argmax_k(rows), fits, data.n, data.d, pen)
