"""Monte-Carlo studies (Z-statistic tables, estimator comparisons) and the empirical-day driver."""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import rng as rngmod
from .bias import BiasLookupError, BiasTable, correct_blocks
from .estimate import (
    EstimationError,
    aggregate,
    block_variance,
    cox_mle,
    fit_block_mle,
    fit_blocks,
    fit_ch,
    fit_global_mle,
    fit_seasonal,  # noqa: F401  (re-exported for the empirical workflow)
    studentize,
)
from .model import (
    DEFAULT_BOX,
    PARAM_NAMES,
    STUDY_T,
    THETA_M,
    BlockPartition,
    ConfigError,
    EventSequence,
    constant_path,
    make_partition,
    model_path,
    resolve_hn_rule,
)
from .simulate import ExplosionError, SimConfig, realize_path, simulate_cox_sqrt, simulate_hawkes

log = logging.getLogger(__name__)

MODELS = ("I", "II", "III", "IV", "const", "cox")
ESTIMATORS = ("naive", "bc", "mle", "ch")
COVERAGE_LEVELS = (0.5, 2.5, 5.0, 95.0, 97.5, 99.5)
EMPIRICAL_RULES = ("sqrt", "2sqrt", "4sqrt", "8sqrt", "16sqrt")


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    model: str = "I"
    n_scale: int = 27300
    T: float = STUDY_T
    hn: tuple = ("273",)
    M: int = 200
    seed: int = 0
    estimators: tuple = ("naive", "bc")
    bias_table: Optional[str] = None
    out: Optional[str] = None
    workers: int = 1
    rep_offset: int = 0
    theta: tuple = THETA_M  # constant and Cox models
    max_fail: float = 0.05

    def __post_init__(self):
        self.hn = tuple(str(h) for h in (self.hn if isinstance(self.hn, (list, tuple)) else [self.hn]))
        self.estimators = tuple(self.estimators)
        self.theta = tuple(float(v) for v in np.atleast_1d(self.theta))

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if self.T <= 0 or self.n_scale < 1:
            raise ConfigError("T and n_scale must be positive")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        for h in self.hn if self.model != "cox" else ():
            hn = resolve_hn_rule(h, self.n_scale, self.T)
            if not 1 <= hn <= self.n_scale:
                raise ConfigError(f"h_n={hn} from rule {h!r} outside [1, n]")
        if "bc" in self.estimators and self.model != "cox":
            if not self.bias_table or not os.path.exists(self.bias_table):
                raise ConfigError(f"bias table {self.bias_table!r} not found (required for 'bc')")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self) -> str:
        d = self.to_dict()
        for k in ("out", "workers"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def labels(self) -> list:
        out = []
        for est in self.estimators:
            if est in ("naive", "bc"):
                if len(self.hn) == 1:
                    out.append(est)
                else:
                    out.extend(f"{est} {h}" for h in self.hn)
            else:
                out.append(est)
        return out


# ---------------------------------------------------------------------------
# summary tables


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".10g")


@dataclass
class ResultTable:
    rows: list
    kind: str = "z"
    n_failed: int = 0

    @staticmethod
    def summarize(x: np.ndarray) -> dict:
        x = np.asarray(x, dtype=float)
        m = float(x.mean())
        row = {"n": int(x.size), "mean": m}
        if x.size > 1:
            s = float(x.std(ddof=1))
            row.update(stdv=s, rmse=math.sqrt(m * m + s * s), stdv_defined=True)
        else:
            row.update(stdv=float("nan"), rmse=float("nan"), stdv_defined=False)
        for p in COVERAGE_LEVELS:
            row[f"cov_{p:g}"] = 100.0 * float(np.mean(x < norm.ppf(p / 100.0)))
        return row

    @classmethod
    def from_samples(cls, samples: dict, kind: str = "z", n_failed: int = 0) -> "ResultTable":
        """``samples[(model, estimator)]`` is an (M, p) array with columns named by PARAM_NAMES."""
        rows = []
        for (model, est), arr in samples.items():
            arr = np.atleast_2d(np.asarray(arr, dtype=float))
            names = PARAM_NAMES if arr.shape[1] == 3 else ("theta",)
            for k, name in enumerate(names):
                rows.append({"model": model, "estimator": est, "parameter": name, **cls.summarize(arr[:, k])})
        return cls(rows, kind, n_failed)

    def get(self, model: str, estimator: str, parameter: str) -> dict:
        for r in self.rows:
            if (r["model"], r["estimator"], r["parameter"]) == (model, estimator, parameter):
                return r
        raise KeyError((model, estimator, parameter))

    def vector(self, model: str, estimator: str, stat: str = "mean") -> np.ndarray:
        return np.array([self.get(model, estimator, p)[stat] for p in PARAM_NAMES])

    def columns(self) -> list:
        return (["model", "estimator", "parameter", "n", "mean", "stdv", "rmse"]
                + [f"cov_{p:g}" for p in COVERAGE_LEVELS])

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(str(r[c]) if c in ("model", "estimator", "parameter", "n") else _fmt(r[c])
                                  for c in cols) + "\n")

    def format(self) -> str:
        lines = []
        head = f"{'model':6}{'estimator':12}{'param':6}{'mean':>9}{'stdv':>9}{'rmse':>9}" + "".join(
            f"{p:>8g}%" for p in COVERAGE_LEVELS)
        lines.append(head)
        for r in self.rows:
            lines.append(f"{r['model']:6}{r['estimator']:12}{r['parameter']:6}{r['mean']:9.3f}{r['stdv']:9.3f}"
                         f"{r['rmse']:9.3f}" + "".join(f"{r[f'cov_{p:g}']:9.2f}" for p in COVERAGE_LEVELS))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# replications

_TABLES: dict = {}


def _load_table(path: Optional[str]) -> Optional[BiasTable]:
    if not path:
        return None
    if path not in _TABLES:
        _TABLES[path] = BiasTable.load(path)
    return _TABLES[path]


def _path_for(cfg: ExperimentConfig):
    if cfg.model == "const":
        return constant_path(cfg.theta, cfg.T)
    return model_path(cfg.model, cfg.T)


@functools.lru_cache(maxsize=8)
def _cox_path(theta: float, T: float):
    # deterministic path: realized once, shared by every replication
    return realize_path(constant_path((theta, 0.0, 1.0), T), 0)


def replicate(cfg: ExperimentConfig, r: int) -> dict:
    """One replication: realize the parameter path, simulate, run every estimator."""
    seed = rngmod.child_seed(cfg.seed, r)
    rec = {"rep": r, "seed": seed, "estimates": {}, "z": {}, "c_diag": {}, "error": None}
    try:
        if cfg.model == "cox":
            theta = cfg.theta[0]
            ev = simulate_cox_sqrt(_cox_path(theta, cfg.T), cfg.n_scale, cfg.T, seed)
            est = cox_mle(len(ev), cfg.n_scale * cfg.T)
            rec["truth"] = [theta]
            rec["estimates"]["mle"] = [est.theta_hat]
            return rec
        realized = realize_path(_path_for(cfg), seed)
        truth = realized.integrated_parameter()
        rec["truth"] = truth.tolist()
        ev = simulate_hawkes(SimConfig(seed=seed, T=cfg.T), realized)
        rec["n_events"] = len(ev)
        table = _load_table(cfg.bias_table) if "bc" in cfg.estimators else None
        single = len(cfg.hn) == 1
        for h in cfg.hn:
            part = make_partition(cfg.n_scale, resolve_hn_rule(h, cfg.n_scale, cfg.T), cfg.T)
            blocks = fit_blocks(ev, part)
            for est_name in ("naive", "bc"):
                if est_name not in cfg.estimators:
                    continue
                label = est_name if single else f"{est_name} {h}"
                if est_name == "naive":
                    est = aggregate(blocks)
                else:
                    est = correct_blocks(blocks, table)
                rec["estimates"][label] = est.theta_bar.tolist()
                rec["z"][label] = studentize(est, truth).tolist()
                rec["c_diag"][label] = np.diag(est.C_hat).tolist()
        if "mle" in cfg.estimators:
            rec["estimates"]["mle"] = fit_global_mle(ev, cfg.T).theta.tolist()
        if "ch" in cfg.estimators:
            rec["estimates"]["ch"] = fit_ch(ev, cfg.T).summary.tolist()
    except (EstimationError, ExplosionError, BiasLookupError, np.linalg.LinAlgError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _replicate_job(args):
    cfg_dict, r = args
    return replicate(ExperimentConfig.from_dict(cfg_dict), r)


@dataclass
class MonteCarloResult:
    config: ExperimentConfig
    records: list
    z_table: Optional[ResultTable]
    error_table: ResultTable
    z_samples: dict = field(default_factory=dict)
    error_samples: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def n_failed(self) -> int:
        return sum(r["error"] is not None for r in self.records)


def run_replications(cfg: ExperimentConfig, progress=None) -> list:
    cfg.validate()
    reps = list(range(cfg.rep_offset, cfg.rep_offset + cfg.M))
    if cfg.workers > 1:
        jobs = [(cfg.to_dict(), r) for r in reps]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        records = []
        for i, r in enumerate(reps):
            records.append(replicate(cfg, r))
            if progress:
                progress(i, len(reps))
    failed = [r for r in records if r["error"] is not None]
    for r in failed:
        log.warning("replication %d failed: %s", r["rep"], r["error"])
    if len(failed) > cfg.max_fail * len(records):
        raise ExperimentError(f"{len(failed)} of {len(records)} replications failed; first: {failed[0]['error']}")
    return records


def collect(cfg: ExperimentConfig, records: list) -> tuple:
    ok = [r for r in records if r["error"] is None]
    z_samples, err_samples = {}, {}
    for label in cfg.labels():
        if cfg.model == "cox":
            err_samples[(cfg.model, label)] = np.array([np.subtract(r["estimates"][label], r["truth"]) for r in ok])
            continue
        err_samples[(cfg.model, label)] = np.array(
            [np.subtract(r["estimates"][label], r["truth"]) for r in ok]).reshape(-1, 3)
        if label.split(" ")[0] in ("naive", "bc"):
            z_samples[(cfg.model, label)] = np.array([r["z"][label] for r in ok]).reshape(-1, 3)
    return z_samples, err_samples


def run_montecarlo(cfg: ExperimentConfig, progress=None) -> MonteCarloResult:
    t0 = time.time()
    records = run_replications(cfg, progress)
    z_samples, err_samples = collect(cfg, records)
    nf = sum(r["error"] is not None for r in records)
    z_table = ResultTable.from_samples(z_samples, "z", nf) if z_samples else None
    err_table = ResultTable.from_samples(err_samples, "error", nf)
    res = MonteCarloResult(cfg, records, z_table, err_table, z_samples, err_samples, time.time() - t0)
    if cfg.out:
        write_outputs(res, cfg.out)
    return res


def run_table12(cfg: ExperimentConfig) -> tuple:
    """Z-statistic table for the naive and/or bias-corrected estimators, plus the Z samples."""
    cfg = dataclasses.replace(cfg, estimators=tuple(e for e in cfg.estimators if e in ("naive", "bc")))
    res = run_montecarlo(cfg)
    return res.z_table, res.z_samples


def run_table3(cfg: ExperimentConfig) -> ResultTable:
    """Raw estimation errors theta_bar - Theta for every requested estimator."""
    return run_montecarlo(cfg).error_table


def qq_rows(samples: dict) -> list:
    rows = []
    for (model, est), arr in samples.items():
        arr = np.atleast_2d(arr)
        m = arr.shape[0]
        q = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
        for k, name in enumerate(PARAM_NAMES[: arr.shape[1]]):
            for qi, zi in zip(q, np.sort(arr[:, k])):
                rows.append((model, est, name, qi, zi))
    return rows


def write_outputs(res: MonteCarloResult, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    if res.z_table is not None:
        res.z_table.to_csv(os.path.join(out, "z_table.csv"))
        with open(os.path.join(out, "qq.csv"), "w") as fh:
            fh.write("model,estimator,parameter,normal_quantile,z\n")
            for model, est, name, q, z in qq_rows(res.z_samples):
                fh.write(f"{model},{est},{name},{_fmt(q)},{_fmt(z)}\n")
    res.error_table.to_csv(os.path.join(out, "error_table.csv"))
    with open(os.path.join(out, "replications.csv"), "w") as fh:
        labels = res.config.labels()
        p = 1 if res.config.model == "cox" else 3
        names = PARAM_NAMES[:p] if p == 3 else ("theta",)
        cols = ["rep", "seed", "error"] + [f"truth_{n}" for n in names]
        for lab in labels:
            cols += [f"{lab}:{n}" for n in names]
            if res.config.model != "cox" and lab.split(" ")[0] in ("naive", "bc"):
                cols += [f"{lab}:z_{n}" for n in names]
        fh.write(",".join(cols) + "\n")
        for r in res.records:
            vals = [str(r["rep"]), str(r["seed"]), (r["error"] or "").replace(",", ";")]
            vals += [_fmt(v) for v in r.get("truth", [float("nan")] * p)]
            for lab in labels:
                vals += [_fmt(v) for v in r["estimates"].get(lab, [float("nan")] * p)]
                if res.config.model != "cox" and lab.split(" ")[0] in ("naive", "bc"):
                    vals += [_fmt(v) for v in r["z"].get(lab, [float("nan")] * p)]
            fh.write(",".join(vals) + "\n")
    manifest = {
        "config": res.config.to_dict(),
        "config_hash": res.config.digest(),
        "seed": res.config.seed,
        "replications": len(res.records),
        "failed": res.n_failed,
        "wall_seconds": round(res.wall_seconds, 3),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# empirical days


def fixed_length_blocks(T: float, length: float) -> list:
    """Consecutive blocks of the given length; a shorter tail block if T is not a multiple."""
    k = int(math.floor(T / length + 1e-9))
    edges = [i * length for i in range(k + 1)]
    if T - edges[-1] > 1e-9 * T:
        edges.append(T)
    else:
        edges[-1] = T
    return list(zip(edges[:-1], edges[1:]))


@dataclass
class EmpiricalResult:
    n_events: int
    T: float
    local_path: list  # dicts: start, end, n_events, theta, ci_halfwidth
    summary: dict  # label -> dict(theta, se, diagnostics)

    def estimate(self, label: str) -> np.ndarray:
        return np.asarray(self.summary[label]["theta"])

    def write(self, out: str) -> None:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "local_path.csv"), "w") as fh:
            fh.write("start,end,n_events,nu,a,b,ci_nu,ci_a,ci_b,converged\n")
            for row in self.local_path:
                fh.write(",".join([_fmt(row["start"]), _fmt(row["end"]), str(row["n_events"])]
                                  + [_fmt(v) for v in row["theta"]] + [_fmt(v) for v in row["ci_halfwidth"]]
                                  + [str(int(row["converged"]))]) + "\n")
        with open(os.path.join(out, "summary.csv"), "w") as fh:
            fh.write("estimator,h_n,nu,a,b,se_nu,se_a,se_b\n")
            for label, s in self.summary.items():
                fh.write(",".join([label, str(s.get("h_n", ""))] + [_fmt(v) for v in s["theta"]]
                                  + [_fmt(v) for v in s.get("se", [float("nan")] * 3)]) + "\n")


def run_empirical(
    events: EventSequence,
    T: Optional[float] = None,
    rules: Sequence[str] = EMPIRICAL_RULES,
    table: Optional[BiasTable] = None,
    block_seconds: float = 1800.0,
    box=DEFAULT_BOX,
    with_ch: bool = True,
) -> EmpiricalResult:
    """Local 30-minute MLE path with 95% intervals plus naive/BC integrated estimates (n = N_T)."""
    T = events.horizon if T is None else float(T)
    n = len(events)
    if n == 0:
        raise EstimationError("no events")
    local = []
    prev = None
    for start, end in fixed_length_blocks(T, block_seconds):
        be = fit_block_mle(events, (start, end), box, warm_start=prev)
        if not be.degenerate:
            prev = be.theta_hat
        try:
            V, _ = block_variance(be)
            half = 1.96 * np.sqrt(np.diag(V))
        except EstimationError:
            half = np.full(3, np.nan)
        local.append({"start": start, "end": end, "n_events": be.n_events, "theta": be.theta.tolist(),
                      "ci_halfwidth": half.tolist(), "converged": be.converged})
    summary = {}
    for i, rule in enumerate(rules, start=1):
        hn = resolve_hn_rule(rule, n, T)
        part = make_partition(n, hn, T)
        blocks = fit_blocks(events, part, box)
        naive = aggregate(blocks)
        summary[f"naive {i}"] = {"theta": naive.theta_bar.tolist(), "se": naive.std_error.tolist(), "h_n": hn}
        if table is not None:
            bc = correct_blocks(blocks, table)
            summary[f"BC {i}"] = {"theta": bc.theta_bar.tolist(), "se": bc.std_error.tolist(), "h_n": hn,
                                  "n_clamped": bc.diagnostics["n_clamped"]}
    g = fit_global_mle(events, T, box)
    summary["MLE"] = {"theta": g.theta.tolist()}
    if with_ch:
        summary["CH"] = {"theta": fit_ch(events, T).summary.tolist()}
    return EmpiricalResult(n, T, local, summary)


def synthetic_days(model: str = "IV", days: int = 100, seed: int = 0, table: Optional[BiasTable] = None,
                   rules: Sequence[str] = EMPIRICAL_RULES, T: float = STUDY_T, with_ch: bool = False) -> list:
    """run_empirical on simulated days of a study model; returns the EmpiricalResult list."""
    out = []
    for d in range(days):
        s = rngmod.child_seed(seed, d)
        rp = realize_path(model_path(model, T), s)
        ev = simulate_hawkes(SimConfig(seed=s, T=T), rp)
        out.append(run_empirical(ev, T, rules, table, with_ch=with_ch))
    return out


def average_days(results: Sequence[EmpiricalResult]) -> dict:
    """Mean of the daily estimates per label (not a pooled fit)."""
    labels = [lab for lab in results[0].summary if all(lab in r.summary for r in results)]
    return {lab: np.mean([r.estimate(lab) for r in results], axis=0) for lab in labels}
