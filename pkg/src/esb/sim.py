"""Synthetic instances, end-to-end trials and aggregated experiment reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import Dataset, HyperParams, ModelIndex
from .errors import EsbError, InfeasibleDesign, InputError
from .linalg import count_supports
from .predict import linear_functional_interval
from .rng import make_rng
from .search import ChainConfig, enumerate_posterior, run_chain, sample_from_table
from .theory import bvm_distance, contraction_metrics

SCHEMA_VERSION = "1"
DESIGNS = ("iid_gaussian", "ar1", "orthogonalized")
SIGNALS = ("beta_min", "fixed")

# stream tags under a config seed
_DATA, _CHAIN, _TABLE, _PROBE = 11, 12, 13, 14


@dataclass(frozen=True)
class SimConfig:
    """One cell of an experiment grid.

    ``signal_k`` is the multiplier in ``|beta*_j| = k sqrt(log p)`` used by
    the ``beta_min`` signal mode; ``sigma_bounds`` are the admissible
    limits for the true noise variance.
    """

    n: int
    p: int
    s_star: int
    design_kind: str = "iid_gaussian"
    rho: float = 0.5
    signal_mode: str = "beta_min"
    signal_k: float = 3.0
    signal_values: Tuple[float, ...] = ()
    sigma0_sq: float = 1.0
    sigma_bounds: Tuple[float, float] = (1e-6, 1e6)
    replications: int = 50
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    enumeration_limit: int = 4096
    n_probes: int = 5
    level: float = 0.95
    C: float = 2.0
    M: float = 10.0
    label: str = ""

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise InputError("need n >= 2 and p >= 1")
        if not 0 <= self.s_star <= min(self.n, self.p):
            raise InputError("s_star must lie in [0, min(n, p)]")
        if self.design_kind not in DESIGNS:
            raise InputError(f"design_kind must be one of {DESIGNS}")
        if self.design_kind == "ar1" and not -1 < self.rho < 1:
            raise InputError("rho must lie in (-1, 1)")
        if self.signal_mode not in SIGNALS:
            raise InputError(f"signal_mode must be one of {SIGNALS}")
        object.__setattr__(self, "signal_values", tuple(float(v) for v in self.signal_values))
        if self.signal_mode == "fixed" and len(self.signal_values) != self.s_star:
            raise InputError("fixed signal needs s_star values")
        lo, hi = self.sigma_bounds
        if not 0 < lo < self.sigma0_sq < hi:
            raise InputError(f"sigma0_sq must lie in ({lo}, {hi})")
        if self.replications < 1:
            raise InputError("replications must be positive")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if not 0 < self.level < 1:
            raise InputError("level must lie in (0, 1)")
        if self.n_probes < 1:
            raise InputError("n_probes must be positive")
        self.hyper.resolve(self.n, self.p)

    @property
    def beta_min(self) -> float:
        return self.signal_k * math.sqrt(math.log(self.p)) if self.p > 1 else self.signal_k

    @property
    def a3_advisory(self) -> bool:
        """``R log p / n < 1`` for the effective support cap."""
        R = self.hyper.resolve(self.n, self.p).R
        return R * math.log(max(self.p, 2)) / self.n < 1

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["signal_values"] = list(self.signal_values)
        doc["sigma_bounds"] = list(self.sigma_bounds)
        doc["hyper"] = self.hyper.to_dict()
        doc["chain"] = self.chain.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown simulation fields: {sorted(unknown)}")
        if "hyper" in doc:
            doc["hyper"] = HyperParams.from_dict(doc["hyper"])
        if "chain" in doc:
            doc["chain"] = ChainConfig.from_dict(doc["chain"])
        for key in ("signal_values", "sigma_bounds"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _design(cfg: SimConfig, rng) -> np.ndarray:
    n, p = cfg.n, cfg.p
    Z = rng.standard_normal((n, p))
    if cfg.design_kind == "iid_gaussian":
        return Z
    if cfg.design_kind == "ar1":
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        w = math.sqrt(1 - cfg.rho**2)
        for j in range(1, p):
            X[:, j] = cfg.rho * X[:, j - 1] + w * Z[:, j]
        return X
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


def generate_instance(cfg: SimConfig, replication_id: int, rng=None) -> Tuple[Dataset, np.ndarray]:
    """Draw ``(X, y)`` and a sparse truth ``beta*`` for one replication."""
    if cfg.design_kind == "orthogonalized" and cfg.p > cfg.n:
        raise InfeasibleDesign(f"orthogonalized design needs p <= n, got p={cfg.p}, n={cfg.n}")
    rng = rng or make_rng(cfg.seed, _DATA, replication_id)
    X = _design(cfg, rng)
    beta = np.zeros(cfg.p)
    if cfg.s_star:
        support = np.sort(rng.choice(cfg.p, size=cfg.s_star, replace=False))
        mags = np.full(cfg.s_star, cfg.beta_min) if cfg.signal_mode == "beta_min" else np.abs(cfg.signal_values)
        signs = rng.choice([-1.0, 1.0], size=cfg.s_star)
        beta[support] = mags * signs
    y = X @ beta + math.sqrt(cfg.sigma0_sq) * rng.standard_normal(cfg.n)
    return Dataset(y, X), beta


def probe_functionals(cfg: SimConfig) -> np.ndarray:
    """Unit-norm probe vectors shared by every replication of a config."""
    Z = make_rng(cfg.seed, _PROBE).standard_normal((cfg.n_probes, cfg.p))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


@dataclass
class TrialResult:
    replication_id: int
    method: str
    true_support: ModelIndex
    selected_map: ModelIndex
    map_correct: bool
    pi_Sstar: float
    l2_error_sq: float
    pred_error_sq: float
    coverage_hits: List[bool]
    bvm: dict
    contraction: dict
    acceptance_rate: float
    a3_advisory: bool
    runtime_ms: int = 0
    error: Optional[str] = None

    def to_dict(self, with_runtime: bool = False) -> dict:
        doc = asdict(self)
        doc["true_support"] = list(self.true_support)
        doc["selected_map"] = list(self.selected_map)
        if not with_runtime:
            doc.pop("runtime_ms")
        return doc


def _chain_seed(cfg: SimConfig, replication_id: int) -> int:
    return int(make_rng(cfg.seed, _CHAIN, replication_id).integers(0, 2**63))


def run_trial(cfg: SimConfig, replication_id: int) -> TrialResult:
    """Generate one instance, compute its posterior and score it against the truth."""
    t0 = time.perf_counter()
    d, beta_star = generate_instance(cfg, replication_id)
    h = cfg.hyper.resolve(d.n, d.p)
    Sstar = tuple(int(j) for j in np.flatnonzero(beta_star))
    n_draws = cfg.chain.n_iter - cfg.chain.burn_in

    if count_supports(d.p, h.R) <= cfg.enumeration_limit:
        method = "enumeration"
        table = enumerate_posterior(d, h, cfg.enumeration_limit)
        samples = sample_from_table(table, d, h, n_draws, make_rng(cfg.seed, _TABLE, replication_id))
        src, selected = table, table.map_model()
    else:
        method = "chain"
        chain = replace(cfg.chain, seed=_chain_seed(cfg, replication_id), chain_id=0)
        samples = run_chain(d, h, chain)
        src, selected = samples, samples.map_model()

    B = samples.beta_matrix()
    post_mean = B.mean(axis=0)
    diff = post_mean - beta_star
    hits = []
    for x in probe_functionals(cfg):
        ci = linear_functional_interval(samples, x, cfg.level)
        hits.append(bool(ci.lower <= x @ beta_star <= ci.upper))
    bvm = bvm_distance(d, src, Sstar, cfg.sigma0_sq, h)
    contraction = contraction_metrics(samples, beta_star, cfg.sigma0_sq, d.X, C=cfg.C, M=cfg.M)
    return TrialResult(
        replication_id=replication_id,
        method=method,
        true_support=Sstar,
        selected_map=tuple(selected),
        map_correct=tuple(selected) == Sstar,
        pi_Sstar=bvm.pi_Sstar,
        l2_error_sq=float(diff @ diff),
        pred_error_sq=float(np.sum((d.X @ diff) ** 2)),
        coverage_hits=hits,
        bvm=bvm.to_dict(),
        contraction=contraction.to_dict(),
        acceptance_rate=float(samples.acceptance_rate),
        a3_advisory=cfg.a3_advisory,
        runtime_ms=int(round(1000 * (time.perf_counter() - t0))),
    )


def _safe_trial(job):
    cfg, rep = job
    try:
        return run_trial(cfg, rep)
    except EsbError as exc:
        return TrialResult(replication_id=rep, method="failed", true_support=(), selected_map=(),
                           map_correct=False, pi_Sstar=math.nan, l2_error_sq=math.nan, pred_error_sq=math.nan,
                           coverage_hits=[], bvm={}, contraction={}, acceptance_rate=math.nan,
                           a3_advisory=cfg.a3_advisory, error=f"{type(exc).__name__}: {exc}")


def worker_count(requested: Optional[int] = None) -> int:
    """Worker cap from ``requested``, else ``ESB_THREADS``, else the CPU count."""
    if requested is None:
        env = os.environ.get("ESB_THREADS")
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(requested))


def _mean_ci(values: Sequence[float]) -> Tuple[float, float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return math.nan, math.nan, math.nan
    m = float(a.mean())
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return m, m - 1.96 * se, m + 1.96 * se


def aggregate(cfg: SimConfig, trials: Sequence[TrialResult]) -> dict:
    ok = [t for t in trials if t.error is None]
    sel, sel_lo, sel_hi = _mean_ci([t.map_correct for t in ok])
    cov = [t.coverage_hits[0] for t in ok]
    cov_all = [h for t in ok for h in t.coverage_hits]
    return {
        "label": cfg.label,
        "n": cfg.n,
        "p": cfg.p,
        "s_star": cfg.s_star,
        "replications": len(trials),
        "successes": len(ok),
        "failures": len(trials) - len(ok),
        "selection_rate": sel,
        "selection_rate_lo": sel_lo,
        "selection_rate_hi": sel_hi,
        "mean_pi_Sstar": _mean_ci([t.pi_Sstar for t in ok])[0],
        "mean_l2_error_sq": _mean_ci([t.l2_error_sq for t in ok])[0],
        "mean_pred_error_sq": _mean_ci([t.pred_error_sq for t in ok])[0],
        "coverage_rate": _mean_ci(cov)[0],
        "coverage_rate_all_probes": _mean_ci(cov_all)[0],
        "mean_tv_upper": _mean_ci([t.bvm["tv_upper"] for t in ok])[0],
        "mean_hellinger_sq": _mean_ci([t.bvm["hellinger_sq"] for t in ok])[0],
        "mean_p_size": _mean_ci([t.contraction["p_size"] for t in ok])[0],
        "mean_p_pred": _mean_ci([t.contraction["p_pred"] for t in ok])[0],
        "mean_p_l2": _mean_ci([t.contraction["p_l2"] for t in ok])[0],
        "a3_advisory": cfg.a3_advisory,
    }


@dataclass
class ExperimentReport:
    grid: List[SimConfig]
    trials: List[List[TrialResult]]
    aggregates: List[dict]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "software_version": __version__,
            "grid": [c.to_dict() for c in self.grid],
            "aggregates": self.aggregates,
        }


def run_experiment(grid: Sequence[SimConfig], out_dir=None, workers: Optional[int] = None) -> ExperimentReport:
    """Run every replication of every config and aggregate per config.

    Failed trials are kept with an error tag; aggregates use the successes.
    When ``out_dir`` is given, ``report.json``, ``report.csv`` and
    ``trials.jsonl`` are written there. File contents depend only on the
    grid; wall-clock timings go to standard error.
    """
    grid = list(grid)
    if not grid:
        raise InputError("empty experiment grid")
    jobs = [(cfg, rep) for cfg in grid for rep in range(cfg.replications)]
    nw = min(worker_count(workers), len(jobs))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(_safe_trial, jobs, chunksize=max(1, len(jobs) // (4 * nw))))
    else:
        results = [_safe_trial(j) for j in jobs]
    per_cfg: List[List[TrialResult]] = []
    k = 0
    for cfg in grid:
        per_cfg.append(sorted(results[k:k + cfg.replications], key=lambda t: t.replication_id))
        k += cfg.replications
    report = ExperimentReport(grid, per_cfg, [aggregate(c, t) for c, t in zip(grid, per_cfg)])
    total_ms = sum(t.runtime_ms for ts in per_cfg for t in ts)
    print(f"simulate: {len(jobs)} trials, {total_ms} ms of trial time, {nw} worker(s)", file=sys.stderr)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, allow_nan=True)


def write_report(report: ExperimentReport, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv", "trials": out / "trials.jsonl"}
    paths["json"].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    buf = io.StringIO()
    cols = list(report.aggregates[0])
    w = csv.DictWriter(buf, fieldnames=["config_index"] + cols, lineterminator="\n")
    w.writeheader()
    for i, row in enumerate(report.aggregates):
        w.writerow({"config_index": i, **{k: repr(v) if isinstance(v, float) else v for k, v in row.items()}})
    paths["csv"].write_text(buf.getvalue())
    with open(paths["trials"], "w") as fh:
        for i, ts in enumerate(report.trials):
            for t in ts:
                fh.write(_dumps({"config_index": i, **t.to_dict()}) + "\n")
    return paths
