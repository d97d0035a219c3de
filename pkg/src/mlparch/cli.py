"""Command-line entry point.

Usage::

    mlparch SUBCOMMAND --config CONFIG.json --out PATH [--seed N] [--threads N]

Subcommands: fit, select, simulate, lrs, expand-check, gram-check,
check-penalty. Configs are JSON objects; unknown keys are rejected. Every
output starts with the package version and the resolved configuration and
is written atomically (temporary file, then rename).

Exit codes: 0 success, 1 other error, 2 configuration error,
3 optimization failure, 4 diagnostic failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import InputDistribution
from .exceptions import ConfigError, MlpArchError, OptimizationError
from .identifiability import gram_test_h3
from .likelihood import MonteCarloQuadrature, NoiseModel, read_dataset_csv
from .network import params_from_dict, params_to_dict, get_transfer, load_params
from .optim import FitConfig, ParamSpace, fit_mle
from .reparam import DEFAULT_CLUSTER_TOL, decompose, expansion_terms
from .selection import Penalty, check_h4, select_architecture
from .simulate import (
    ExperimentPlan,
    consistency_experiment,
    generate_dataset,
    lrs_tightness_experiment,
)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_OPTIM, EXIT_DIAGNOSTIC = 0, 1, 2, 3, 4

_FIT_KEYS = {
    "transfer": "tanh",
    "sigma2": None,
    "box_bound": 20.0,
    "eta": 0.1,
    "restarts": 20,
    "max_iters": 5000,
    "grad_tol": 1e-8,
    "ftol": 1e-8,
    "init_scale": 2.0,
    "seed": 0,
}

_PLAN_KEYS = {
    "theta0": None,
    "transfer": None,
    "sigma2": 0.09,
    "fit_sigma2": None,
    "input": {"kind": "standard_normal"},
    "n_grid": [100, 500, 2000, 5000],
    "replications": 50,
    "M": 3,
    "penalty": "bic",
    "fit": {},
    "master_seed": 0,
    "box_bound": 20.0,
    "eta": 0.1,
    "raw_records": False,
}

SCHEMAS = {
    "fit": dict(_FIT_KEYS, data=None, k=None),
    "select": dict(_FIT_KEYS, data=None, M=10, penalty="bic", warm_start=True),
    "simulate": dict(_PLAN_KEYS),
    "lrs": dict(_PLAN_KEYS, k_over=None, loose_factor=100.0),
    "expand-check": {
        "theta": None,
        "theta0": None,
        "sigma2": 1.0,
        "input": {"kind": "standard_normal"},
        "h_values": [1.0, 0.1, 0.01, 0.001],
        "n_z": 1000,
        "mc_samples": 100_000,
        "cluster_tol": DEFAULT_CLUSTER_TOL,
        "seed": 0,
    },
    "gram-check": {
        "theta0": None,
        "input": {"kind": "standard_normal"},
        "mc_samples": 100_000,
        "seed": 0,
        "threshold": 1e-3,
    },
    "check-penalty": {
        "penalty": "bic",
        "k_max": 10,
        "n_grid": [100, 1000, 10_000, 100_000],
        "d": 1,
    },
}

_REQUIRED = {
    "fit": ("data", "k"),
    "select": ("data",),
    "simulate": ("theta0",),
    "lrs": ("theta0",),
    "expand-check": ("theta", "theta0"),
    "gram-check": ("theta0",),
    "check-penalty": (),
}

_SEED_KEY = {"simulate": "master_seed", "lrs": "master_seed"}
_PATH_KEYS = ("data", "theta", "theta0")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_config(command: str, path, seed: int | None = None) -> dict:
    """Read a JSON config, reject unknown keys, fill defaults, resolve paths."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{path}: unknown keys for '{command}': {unknown}")
    missing = [k for k in _REQUIRED[command] if raw.get(k) is None]
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")
    cfg = dict(schema)
    cfg.update(raw)
    if seed is not None:
        cfg[_SEED_KEY.get(command, "seed")] = seed
    for key in _PATH_KEYS:
        val = cfg.get(key)
        if isinstance(val, str):
            p = Path(val)
            if not p.is_absolute():
                p = path.parent / p
            if not p.is_file():
                raise ConfigError(f"{key} file {p} does not exist")
            cfg[key] = str(p)
    return cfg


def _fit_cfg(cfg: dict) -> FitConfig:
    try:
        return FitConfig(
            restarts=int(cfg["restarts"]),
            max_iters=int(cfg["max_iters"]),
            grad_tol=float(cfg["grad_tol"]),
            init_scale=float(cfg["init_scale"]),
            seed=int(cfg["seed"]),
            ftol=float(cfg["ftol"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad fit settings: {exc}") from None


def _theta_from(value):
    if isinstance(value, dict):
        return params_from_dict(value)
    return load_params(value)


def _plan(cfg: dict) -> ExperimentPlan:
    theta0, phi = _theta_from(cfg["theta0"])
    transfer = cfg["transfer"] or phi.name
    fit_keys = set(asdict(FitConfig()))
    unknown = set(cfg["fit"]) - fit_keys
    if unknown:
        raise ConfigError(f"unknown keys in 'fit': {sorted(unknown)}")
    try:
        return ExperimentPlan(
            theta0=theta0,
            noise=NoiseModel(float(cfg["sigma2"])),
            input=InputDistribution.from_dict(cfg["input"], d=theta0.d),
            n_grid=tuple(cfg["n_grid"]),
            replications=int(cfg["replications"]),
            M=int(cfg["M"]),
            penalty=Penalty.parse(cfg["penalty"]),
            fit_cfg=FitConfig(**cfg["fit"]),
            master_seed=int(cfg["master_seed"]),
            transfer=get_transfer(transfer).name,
            box_bound=float(cfg["box_bound"]),
            eta=float(cfg["eta"]),
            fit_sigma2=None if cfg["fit_sigma2"] is None else float(cfg["fit_sigma2"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment plan: {exc}") from None


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _header(command: str, cfg: dict) -> list[str]:
    return [f"# mlparch {__version__} {command}",
            "# config: " + json.dumps(cfg, sort_keys=True)]


def _csv_text(header_lines, columns, rows, summary_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    for line in summary_lines:
        buf.write(line + "\n")
    return buf.getvalue()


def _json_text(doc: dict) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(type(o).__name__)

    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(json.loads(json.dumps(doc, default=default))), indent=2, sort_keys=True) + "\n"


def write_atomic(outputs: dict) -> None:
    """Write ``{path: text}``; either every file appears or none does."""
    temps = []
    try:
        for path, text in outputs.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            temps.append((tmp, path))
        for tmp, path in temps:
            os.replace(tmp, path)
    finally:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix) if out.suffix else out.with_name(out.name + suffix)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_fit(cfg, out, threads):
    data = read_dataset_csv(cfg["data"])
    phi = get_transfer(cfg["transfer"])
    space = ParamSpace(int(cfg["k"]), data.d, float(cfg["box_bound"]), float(cfg["eta"]))
    sigma2 = cfg["sigma2"]
    noise = NoiseModel(1.0 if sigma2 is None else float(sigma2))
    res = fit_mle(space, phi, noise, data, _fit_cfg(cfg), n_jobs=threads)
    if sigma2 is None:
        noise = NoiseModel(max(res.rss / data.n, np.finfo(float).tiny))
        res.loglik = -0.5 * data.n * math.log(2 * math.pi * noise.sigma2) - res.rss / (2 * noise.sigma2)
    doc = params_to_dict(
        res.theta_hat, phi,
        loglik=res.loglik, rss=res.rss, sigma2=noise.sigma2,
        sigma2_plugin=sigma2 is None,
        converged_restarts=res.converged_restarts,
        best_restart_index=res.best_restart_index,
        near_boundary=res.near_boundary,
        meta={"version": __version__, "command": "fit", "config": cfg},
    )
    return {out: _json_text(doc)}, EXIT_OK


def _cmd_select(cfg, out, threads):
    data = read_dataset_csv(cfg["data"])
    phi = get_transfer(cfg["transfer"])
    sigma2 = cfg["sigma2"]
    noise = NoiseModel(1.0 if sigma2 is None else float(sigma2))
    sel = select_architecture(data, int(cfg["M"]), Penalty.parse(cfg["penalty"]), phi, noise,
                              _fit_cfg(cfg), box_bound=float(cfg["box_bound"]),
                              eta=float(cfg["eta"]), warm_start=bool(cfg["warm_start"]),
                              n_jobs=threads)
    if sigma2 is None:
        sel = sel.rescore(NoiseModel(max(sel.fits[-1].rss / data.n, np.finfo(float).tiny)))
    summary = [f"# k_hat={sel.k_hat}"]
    if sel.still_increasing:
        summary.append("# warning: T_n still increasing at k=M; M may be too small")
    text = _csv_text(_header("select", cfg), ["k", "loglik", "penalty", "T_n"], sel.per_k, summary)
    doc = sel.to_dict()
    doc["fits"] = [params_to_dict(f.theta_hat, phi, rss=f.rss) for f in sel.fits]
    doc["meta"] = {"version": __version__, "command": "select", "config": cfg}
    return {out: text, _sibling(out, ".json"): _json_text(doc)}, EXIT_OK


def _table_outputs(command, cfg, out, table, raw: bool):
    outputs = {out: _csv_text(_header(command, cfg), table.columns, table.rows)}
    doc = dict(table.summary)
    doc["columns"] = table.columns
    doc["rows"] = table.rows
    doc["meta"] = {"version": __version__, "command": command, "config": cfg}
    outputs[_sibling(out, ".json")] = _json_text(doc)
    if raw:
        outputs[_sibling(out, ".raw.csv")] = _csv_text(_header(command, cfg), table.raw_columns, table.raw)
    return outputs


def _cmd_simulate(cfg, out, threads):
    plan = _plan(cfg)
    table = consistency_experiment(plan, n_jobs=threads)
    return _table_outputs("simulate", cfg, out, table, bool(cfg["raw_records"])), EXIT_OK


def _cmd_lrs(cfg, out, threads):
    plan = _plan(cfg)
    k_over = plan.k0 + 2 if cfg["k_over"] is None else int(cfg["k_over"])
    table = lrs_tightness_experiment(plan, k_over, float(cfg["loose_factor"]), n_jobs=threads)
    return _table_outputs("lrs", cfg, out, table, bool(cfg["raw_records"])), EXIT_OK


def _cmd_expand_check(cfg, out, threads):
    theta, phi = load_params(cfg["theta"])
    theta0, phi0 = load_params(cfg["theta0"])
    if phi != phi0:
        raise ConfigError("theta and theta0 use different transfer functions")
    noise = NoiseModel(float(cfg["sigma2"]))
    noise.check()
    inp = InputDistribution.from_dict(cfg["input"], d=theta0.d)
    dec = decompose(theta, theta0, float(cfg["cluster_tol"]))
    direction = dec.phi_t - dec.phi0()
    seed = int(cfg["seed"])
    z = generate_dataset(theta0, phi, noise, inp, int(cfg["n_z"]), seed + 1)
    quad = MonteCarloQuadrature(theta0, phi, noise, inp, int(cfg["mc_samples"]), seed)
    rows = []
    for h in cfg["h_values"]:
        terms = expansion_terms(dec.with_phi(dec.phi0() + float(h) * direction), theta0, phi,
                                noise, (z.xs, z.ys), quad)
        rem = float(np.mean(np.abs(terms.remainder)))
        rows.append([float(h), terms.D, rem, rem / terms.D if terms.D > 0 else float("nan")])
    text = _csv_text(_header("expand-check", cfg), ["h", "D", "abs_remainder", "ratio"], rows,
                     [f"# t={list(dec.t)}"])
    return {out: text}, EXIT_OK


def _cmd_gram_check(cfg, out, threads):
    theta0, phi = load_params(cfg["theta0"])
    inp = InputDistribution.from_dict(cfg["input"], d=theta0.d)
    rep = gram_test_h3(theta0, phi, inp, int(cfg["mc_samples"]), int(cfg["seed"]),
                       float(cfg["threshold"]))
    summary = [f"# min_eigenvalue={rep.min_eigenvalue!r}",
               f"# min_eigenvalue_se={rep.min_eigenvalue_se!r}",
               f"# supported={'true' if rep.supported else 'false'}"]
    text = _csv_text(_header("gram-check", cfg), rep.labels, rep.matrix.tolist(), summary)
    doc = rep.to_dict()
    doc["meta"] = {"version": __version__, "command": "gram-check", "config": cfg}
    code = EXIT_OK if rep.supported else EXIT_DIAGNOSTIC
    return {out: text, _sibling(out, ".json"): _json_text(doc)}, code


def _cmd_check_penalty(cfg, out, threads):
    rep = check_h4(Penalty.parse(cfg["penalty"]), int(cfg["k_max"]), cfg["n_grid"], int(cfg["d"]))
    doc = rep.to_dict()
    doc["meta"] = {"version": __version__, "command": "check-penalty", "config": cfg}
    return {out: _json_text(doc)}, EXIT_OK if rep.passed else EXIT_DIAGNOSTIC


COMMANDS = {
    "fit": _cmd_fit,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "lrs": _cmd_lrs,
    "expand-check": _cmd_expand_check,
    "gram-check": _cmd_gram_check,
    "check-penalty": _cmd_check_penalty,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlparch",
        description="Consistent selection of the number of hidden units of a one-hidden-layer MLP.",
    )
    parser.add_argument("--version", action="version", version=f"mlparch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="maximum worker count")
    return parser


def run(command: str, config: str, out: str, seed: int | None = None, threads: int = 1) -> int:
    """Execute one subcommand and return its exit status."""
    try:
        cfg = load_config(command, config, seed)
        outputs, code = COMMANDS[command](cfg, Path(out), max(1, int(threads)))
        write_atomic(outputs)
        return code
    except ConfigError as exc:
        print(f"mlparch: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OptimizationError as exc:
        print(f"mlparch: optimization failed (k={exc.k}): {exc}", file=sys.stderr)
        return EXIT_OPTIM
    except MlpArchError as exc:
        # malformed input files count as configuration problems
        print(f"mlparch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
