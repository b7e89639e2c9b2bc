"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical error, 4 guard error.
Result paths go to standard output, diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, io
from .core import Dataset, HyperParams
from .errors import EsbError, InputError
from .linalg import count_supports
from .predict import predictive_summary
from .search import (ENUMERATION_LIMIT, ChainConfig, PosteriorSamples, enumerate_posterior,
                     inclusion_probabilities, merge_samples, run_chain)
from .sim import SimConfig, run_experiment, worker_count
from .theory import DEFAULT_OMEGA, DEFAULT_SHAPE_DF, DEFAULT_TAIL_GRID, restricted_kappa_series, tail_suite

SCHEMA_VERSION = "1"


def _log(msg: str) -> None:
    print(f"esb: {msg}", file=sys.stderr)


def _load_data(args) -> Dataset:
    return io.read_dataset(args.data, args.format)


def _load_hyper(args, d: Dataset) -> HyperParams:
    h = io.read_hyperparams(args.config) if args.config else HyperParams()
    if getattr(args, "R", None) is not None:
        h = replace(h, R=args.R)
    h = h.resolve(d.n, d.p)
    for flag in h.flags:
        _log(f"warning: {flag}; intervals may under-cover")
    return h


def _chain_config(args) -> ChainConfig:
    doc = io.read_json(args.chain) if args.chain else {}
    cfg = ChainConfig.from_dict(doc)
    over = {k: v for k, v in (("n_iter", args.n_iter), ("burn_in", args.burn_in), ("seed", args.seed))
            if v is not None}
    return replace(cfg, **over)


def _header(command: str, config: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "software_version": __version__, "command": command,
            "config": config}


def _chain_job(job):
    d, h, cfg = job
    return run_chain(d, h, cfg)


def _run_chains(d: Dataset, h: HyperParams, cfg: ChainConfig, n_chains: int) -> PosteriorSamples:
    cfgs = [replace(cfg, chain_id=cfg.chain_id + k) for k in range(n_chains)]
    nw = min(worker_count(), n_chains)
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(_chain_job, [(d, h, c) for c in cfgs]))
    else:
        parts = [run_chain(d, h, c) for c in cfgs]
    return merge_samples(parts)


def cmd_fit(args) -> int:
    d = _load_data(args)
    h = _load_hyper(args, d)
    cfg = _chain_config(args)
    samples = _run_chains(d, h, cfg, args.chains)
    out = Path(args.out)
    io.write_samples_jsonl(samples, out / "samples.jsonl")
    freq = samples.model_frequencies()
    top = sorted(freq.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))[: args.top]
    doc = _header("fit", {
        "data": str(args.data), "format": args.format, "hyper": h.to_dict(), "chain": cfg.to_dict(),
        "chains": args.chains,
    })
    doc.update({
        "n": d.n,
        "p": d.p,
        "n_draws": len(samples),
        "acceptance_rate": samples.acceptance_rate,
        "inclusion_probabilities": inclusion_probabilities(samples).tolist(),
        "map_model": list(samples.map_model()),
        "posterior_mean_sigma2": float(np.mean(samples.sigma2_draws)),
        "posterior_mean_beta": samples.beta_matrix().mean(axis=0).tolist(),
        "top_models": [{"model": list(m), "frequency": q} for m, q in top],
        "flags": list(h.flags),
        "samples_file": "samples.jsonl",
    })
    print(io.write_json(doc, out / "summary.json"))
    return 0


def cmd_enumerate(args) -> int:
    d = _load_data(args)
    h = _load_hyper(args, d)
    table = enumerate_posterior(d, h, args.limit)
    doc = _header("enumerate", {"data": str(args.data), "format": args.format, "hyper": h.to_dict(),
                                "limit": args.limit})
    doc.update(io.table_to_dict(table))
    doc["inclusion_probabilities"] = inclusion_probabilities(table).tolist()
    doc["map_model"] = list(table.map_model())
    doc["flags"] = list(h.flags)
    print(io.write_json(doc, args.out))
    return 0


def cmd_predict(args) -> int:
    d = _load_data(args)
    h = _load_hyper(args, d)
    Xt = io.read_csv_matrix(args.xtilde, d.p)
    if not 0 < args.level < 1:
        raise InputError("level must lie in (0, 1)")
    config = {"data": str(args.data), "format": args.format, "xtilde": str(args.xtilde), "hyper": h.to_dict(),
              "level": args.level, "limit": args.limit}
    if count_supports(d.p, h.R) <= args.limit:
        src, config["source"] = enumerate_posterior(d, h, args.limit), "enumeration"
    else:
        cfg = _chain_config(args)
        src, config["source"], config["chain"] = run_chain(d, h, cfg), "chain", cfg.to_dict()
    rows = predictive_summary(src, d, h, Xt, args.level)
    doc = _header("predict", config)
    doc["rows"] = rows
    doc["flags"] = list(h.flags)
    print(io.write_json(doc, args.out))
    return 0


def cmd_check_theory(args) -> int:
    seed = args.seed if args.seed is not None else 0
    reports, shape = tail_suite(args.n_mc, seed)
    config = {"n_mc": args.n_mc, "seed": seed, "grid": [list(g) for g in DEFAULT_TAIL_GRID],
              "omega": DEFAULT_OMEGA, "shape_df": DEFAULT_SHAPE_DF, "data": args.data, "s_max": args.s_max}
    doc = _header("check-theory", config)
    doc["tail_checks"] = [r.to_dict() for r in reports]
    doc["rate_shape"] = shape.to_dict()
    if args.data:
        d = _load_data(args)
        series = restricted_kappa_series(d.X, min(args.s_max, d.p))
        doc["kappa"] = [{"s": k.s, "kappa": k.kappa, "argmin_support": list(k.argmin_support),
                         "exhaustive": k.exhaustive} for k in series]
    failed = [r for r in reports if not r.passed and not r.vacuous]
    doc["all_passed"] = not failed and shape.passed
    for r in failed:
        _log(f"check failed: {r.check} p={r.df} lam={r.noncentrality} threshold={r.threshold}")
    if not shape.passed:
        _log("rate-shape check failed")
    print(io.write_json(doc, args.out))
    return 0


def cmd_simulate(args) -> int:
    doc = io.read_json(args.config)
    items = doc.get("configs") if isinstance(doc, dict) else doc
    if not isinstance(items, list) or not items:
        raise InputError("grid file must hold a non-empty list of configs (or {'configs': [...]})")
    grid = [SimConfig.from_dict(c) for c in items]
    if args.seed is not None:
        grid = [replace(c, seed=args.seed) for c in grid]
    report = run_experiment(grid, args.out, workers=args.workers)
    failures = sum(a["failures"] for a in report.aggregates)
    if failures:
        _log(f"{failures} trial(s) failed; see trials.jsonl")
    print(Path(args.out) / "report.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="esb", description="Empirical-prior Bayesian sparse regression.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_opts(p, required=True):
        p.add_argument("--data", required=required,
                       help="dataset path (CSV with header, response first) or @name for bundled data")
        p.add_argument("--format", choices=("csv", "bin"), default="csv", help="dataset format (default csv)")

    def model_opts(p):
        p.add_argument("--config", help="hyperparameter JSON (alpha, gamma, a0, b0, c, a, R)")
        p.add_argument("--R", type=int, help="override the support-size cap")

    def chain_opts(p):
        p.add_argument("--chain", help="chain configuration JSON")
        p.add_argument("--n-iter", type=int, help="override chain iterations")
        p.add_argument("--burn-in", type=int, help="override burn-in")
        p.add_argument("--seed", type=int, help="64-bit seed")

    p = sub.add_parser("fit", help="sample the posterior by Metropolis-Hastings over supports")
    data_opts(p)
    model_opts(p)
    chain_opts(p)
    p.add_argument("--chains", type=int, default=1, help="independent chains to merge (default 1)")
    p.add_argument("--top", type=int, default=20, help="most frequent models listed in the summary")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("enumerate", help="exact posterior over all supports with |S| <= R")
    data_opts(p)
    model_opts(p)
    p.add_argument("--limit", type=int, default=ENUMERATION_LIMIT, help="maximum number of supports")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("predict", help="model-averaged predictive summaries at new rows")
    data_opts(p)
    model_opts(p)
    chain_opts(p)
    p.add_argument("--xtilde", required=True, help="CSV of new predictor rows (header, p columns)")
    p.add_argument("--level", type=float, default=0.95, help="interval level (default 0.95)")
    p.add_argument("--limit", type=int, default=4096, help="enumerate when at most this many supports")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("check-theory", help="Monte Carlo tail-bound suite and restricted eigenvalues")
    data_opts(p, required=False)
    p.add_argument("--n-mc", type=int, default=10**5, help="draws per check (default 1e5)")
    p.add_argument("--seed", type=int, help="64-bit seed")
    p.add_argument("--s-max", type=int, default=3, help="largest support size for kappa (with --data)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_check_theory)

    p = sub.add_parser("simulate", help="run a simulation grid")
    p.add_argument("--config", required=True, help="grid JSON (list of configs) or @small_grid")
    p.add_argument("--seed", type=int, help="override every config seed")
    p.add_argument("--workers", type=int, help="worker processes (default: ESB_THREADS or CPU count)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EsbError as exc:
        _log(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
