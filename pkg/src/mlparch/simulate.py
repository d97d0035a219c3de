"""Data generation from the true model and the two Monte-Carlo experiments.

Every (n, r) cell of an experiment draws its data and fit seeds from
``derive_seed(master_seed, n, r, stream)``, so cells can be evaluated in
any order, serially or in worker processes, with identical results.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .distributions import InputDistribution
from .exceptions import InvalidInputError, OptimizationError
from .likelihood import Dataset, GenerationMeta, NoiseModel
from .network import MlpParams, TransferFunction, forward, get_transfer
from .optim import BoundaryWarning, FitConfig, ParamSpace, embed, fit_mle
from .selection import Penalty, select_architecture

__all__ = [
    "InputDistribution",
    "ExperimentPlan",
    "derive_seed",
    "generate_dataset",
    "consistency_experiment",
    "lrs_tightness_experiment",
    "ExperimentTable",
    "default_plan",
]

_STREAM_DATA = 0
_STREAM_FIT = 1


def derive_seed(master_seed: int, n: int, r: int, stream: int = _STREAM_DATA) -> int:
    """64-bit seed for cell (n, r) from a counter-keyed SeedSequence."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(n), int(r), int(stream)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(theta0: MlpParams, phi: TransferFunction, noise: NoiseModel,
                     input: InputDistribution, n: int, seed: int) -> Dataset:
    """Draw ``y_t = F_theta0(x_t) + eps_t`` with ``x_t ~ input`` and ``eps_t ~ N(0, sigma2)``.

    ``noise.sigma2 = 0`` gives noiseless responses.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if input.d != theta0.d:
        raise InvalidInputError(f"input has d={input.d}, theta0 has d={theta0.d}")
    rng = np.random.default_rng(seed)
    X = input.sample(rng, n)
    eps = rng.standard_normal(n) * noise.sigma
    y = forward(theta0, phi, X) + eps
    meta = GenerationMeta(theta0=theta0, sigma2=noise.sigma2, input=input.kind, seed=seed)
    return Dataset(X, y, meta)


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce an experiment.

    ``noise`` generates the data. ``fit_sigma2`` is the variance assumed by
    the likelihood (defaults to ``noise.sigma2``; required when the data are
    noiseless).
    """

    theta0: MlpParams
    noise: NoiseModel
    input: InputDistribution
    n_grid: tuple
    replications: int = 50
    M: int = 3
    penalty: Penalty = field(default_factory=Penalty)
    fit_cfg: FitConfig = field(default_factory=FitConfig)
    master_seed: int = 0
    transfer: str = "tanh"
    box_bound: float = 20.0
    eta: float = 0.1
    fit_sigma2: float | None = None

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise InvalidInputError(f"n_grid must be increasing positive integers, got {grid}")
        object.__setattr__(self, "n_grid", grid)
        if self.replications < 1:
            raise InvalidInputError("replications must be >= 1")
        if self.M < 1:
            raise InvalidInputError("M must be >= 1")
        if self.input.d != self.theta0.d:
            raise InvalidInputError("input dimension differs from theta0")
        self.fit_noise.check()

    @property
    def phi(self) -> TransferFunction:
        return get_transfer(self.transfer)

    @property
    def k0(self) -> int:
        return self.theta0.k

    @property
    def fit_noise(self) -> NoiseModel:
        s2 = self.noise.sigma2 if self.fit_sigma2 is None else self.fit_sigma2
        return NoiseModel(s2)

    def to_dict(self) -> dict:
        return {
            "theta0": {"k": self.theta0.k, "d": self.theta0.d,
                       "flat_theta": [float(v) for v in self.theta0.to_flat()]},
            "transfer": self.transfer,
            "sigma2": self.noise.sigma2,
            "fit_sigma2": self.fit_sigma2,
            "input": self.input.to_dict(),
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "M": self.M,
            "penalty": str(self.penalty),
            "fit": asdict(self.fit_cfg),
            "master_seed": self.master_seed,
            "box_bound": self.box_bound,
            "eta": self.eta,
        }


def default_plan(**overrides) -> ExperimentPlan:
    """The desk-scale consistency plan: one tanh unit, d = 1, sigma = 0.3."""
    plan = ExperimentPlan(
        theta0=MlpParams(beta=0.0, a=[2.0], b=[1.0], W=[[1.5]]),
        noise=NoiseModel(0.09),
        input=InputDistribution("standard_normal", 1),
        n_grid=(100, 500, 2000, 5000),
        replications=50,
        M=3,
        penalty=Penalty("bic"),
        fit_cfg=FitConfig(restarts=20),
    )
    return replace(plan, **overrides)


@dataclass
class ExperimentTable:
    """Aggregated rows plus optional per-replication records."""

    columns: list
    rows: list
    summary: dict
    raw_columns: list = field(default_factory=list)
    raw: list = field(default_factory=list)


def _map_cells(func, args, n_jobs: int):
    if n_jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(func, args, chunksize=max(1, len(args) // (4 * n_jobs))))
    return [func(a) for a in args]


def _consistency_cell(arg):
    plan, n, r = arg
    with threadpool_limits(limits=1), warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        data = generate_dataset(plan.theta0, plan.phi, plan.noise, plan.input, n,
                                derive_seed(plan.master_seed, n, r, _STREAM_DATA))
        cfg = replace(plan.fit_cfg, seed=derive_seed(plan.master_seed, n, r, _STREAM_FIT))
        try:
            res = select_architecture(data, plan.M, plan.penalty, plan.phi, plan.fit_noise, cfg,
                                      box_bound=plan.box_bound, eta=plan.eta)
        except OptimizationError as exc:
            return {"n": n, "r": r, "k_hat": None, "failed": True, "error": str(exc), "T_n": []}
    return {"n": n, "r": r, "k_hat": res.k_hat, "failed": False, "error": "",
            "T_n": [row[3] for row in res.per_k]}


def consistency_experiment(plan: ExperimentPlan, n_jobs: int = 1) -> ExperimentTable:
    """Frequency of ``k_hat = k0`` for each sample size of the plan.

    A failed selection is recorded, not raised; a sample size where more
    than 10% of replications fail is marked invalid.
    """
    if plan.k0 > plan.M:
        raise InvalidInputError(f"true k0={plan.k0} exceeds M={plan.M}")
    args = [(plan, n, r) for n in plan.n_grid for r in range(plan.replications)]
    cells = _map_cells(_consistency_cell, args, n_jobs)

    columns = ["n", "replications", "failures", "valid", "freq_k0"] + [
        f"count_k{k}" for k in range(1, plan.M + 1)
    ]
    rows = []
    for n in plan.n_grid:
        group = [c for c in cells if c["n"] == n]
        ok = [c for c in group if not c["failed"]]
        fails = len(group) - len(ok)
        counts = [sum(c["k_hat"] == k for c in ok) for k in range(1, plan.M + 1)]
        freq = counts[plan.k0 - 1] / len(ok) if ok else float("nan")
        rows.append([n, len(group), fails, fails <= 0.1 * len(group), freq] + counts)
    raw_columns = ["n", "r", "k_hat", "failed"] + [f"T_n_k{k}" for k in range(1, plan.M + 1)]
    raw = [[c["n"], c["r"], c["k_hat"], c["failed"]] + list(c["T_n"]) for c in cells]
    summary = {
        "experiment": "consistency",
        "k0": plan.k0,
        "freq_k0": {str(row[0]): row[4] for row in rows},
        "all_valid": all(row[3] for row in rows),
    }
    return ExperimentTable(columns, rows, summary, raw_columns, raw)


def _lrs_cell(arg):
    plan, n, r, k_over, factor = arg
    out = {"n": n, "r": r}
    with threadpool_limits(limits=1), warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        data = generate_dataset(plan.theta0, plan.phi, plan.noise, plan.input, n,
                                derive_seed(plan.master_seed, n, r, _STREAM_DATA))
        cfg = replace(plan.fit_cfg, seed=derive_seed(plan.master_seed, n, r, _STREAM_FIT))
        for cond, B in (("bounded", plan.box_bound), ("loose", plan.box_bound * factor)):
            try:
                sp0 = ParamSpace(plan.k0, plan.theta0.d, B, plan.eta)
                fit0 = fit_mle(sp0, plan.phi, plan.fit_noise, data, cfg)
                if k_over == plan.k0:
                    lrs = 0.0
                else:
                    sp1 = sp0.with_k(k_over)
                    fit1 = fit_mle(sp1, plan.phi, plan.fit_noise, data, cfg,
                                   init=[embed(fit0.theta_hat, sp1)])
                    lrs = 2.0 * (fit1.loglik - fit0.loglik)
                out[cond] = lrs
            except OptimizationError:
                out[cond] = None
    return out


def lrs_tightness_experiment(plan: ExperimentPlan, k_over: int, loose_factor: float = 100.0,
                             n_jobs: int = 1) -> ExperimentTable:
    """Distribution of ``LRS_n = 2 (max_{k_over} l_n - max_{k0} l_n)`` per sample size.

    The overfitted model is warm-started from the k0 optimum, so the
    statistic is nonnegative up to optimizer slack; it is clamped at 0 and
    the pre-clamp minimum is reported. Each dataset is fitted twice: with
    the plan's box bound ("bounded") and with the bound multiplied by
    ``loose_factor`` ("loose").
    """
    if k_over < plan.k0:
        raise InvalidInputError(f"k_over={k_over} must be >= k0={plan.k0}")
    args = [(plan, n, r, k_over, loose_factor) for n in plan.n_grid for r in range(plan.replications)]
    cells = _map_cells(_lrs_cell, args, n_jobs)

    columns = ["condition", "n", "box_bound", "replications", "failures", "valid",
               "median", "q90", "max", "min_pre_clamp", "clamped"]
    rows = []
    for cond, B in (("bounded", plan.box_bound), ("loose", plan.box_bound * loose_factor)):
        for n in plan.n_grid:
            vals = [c[cond] for c in cells if c["n"] == n]
            ok = np.array([v for v in vals if v is not None], dtype=float)
            fails = len(vals) - ok.size
            if ok.size:
                clamped = np.maximum(ok, 0.0)
                stats = [float(np.median(clamped)), float(np.quantile(clamped, 0.9)),
                         float(clamped.max()), float(ok.min()), int(np.sum(ok < 0))]
            else:
                stats = [float("nan")] * 4 + [0]
            rows.append([cond, n, B, len(vals), fails, fails <= 0.1 * len(vals)] + stats)
    raw_columns = ["n", "r", "lrs_bounded_pre_clamp", "lrs_loose_pre_clamp"]
    raw = [[c["n"], c["r"], c["bounded"], c["loose"]] for c in cells]
    summary = {
        "experiment": "lrs",
        "k0": plan.k0,
        "k_over": k_over,
        "loose_factor": loose_factor,
        "q90": {f"{row[0]}:{row[1]}": row[7] for row in rows},
        "min_pre_clamp": min((row[9] for row in rows), default=float("nan")),
    }
    return ExperimentTable(columns, rows, summary, raw_columns, raw)
