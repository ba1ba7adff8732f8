"""Monte Carlo experiments: simulate, estimate, summarize."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from .alternatives import (VARIANTS, alt1_regression, alt2_regression, alt_variant,
                           proxy_exogenous_markov)
from .dgp import DgpConfig, TrueEffects, simulate_panel
from .estimation.pipeline import EstimateOptions, estimate
from .peers import build_weights

__all__ = [
    "ESTIMATORS",
    "ExperimentSpec",
    "MetricRow",
    "ExperimentReport",
    "ExperimentAborted",
    "metrics",
    "rejection_frequency",
    "run_replication",
    "run_experiment",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("main", "proxy_exo", "alt1", "alt2", "alt_variants")


class ExperimentAborted(RuntimeError):
    """Estimator failures exceeded the allowed rate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def metrics(estimates, truth) -> tuple[float, float, float]:
    """Mean, RMSE and MAE over replications.

    Each replication contributes either a scalar or an array of
    observation-level estimates; ``truth`` matches (scalar, or one array
    per replication). Mean averages the per-replication means; RMSE is the
    root of the average squared observation-level error and MAE the
    average absolute error, each first averaged within a replication.
    """
    estimates = list(estimates)
    if not estimates:
        raise ValueError("metrics need at least one replication")
    if np.isscalar(truth) or np.ndim(truth) == 0:
        truth = [truth] * len(estimates)
    means, mse, mae = [], [], []
    for e, t in zip(estimates, truth):
        e = np.atleast_1d(np.asarray(e, dtype=float))
        err = e - np.asarray(t, dtype=float)
        ok = np.isfinite(err)
        means.append(np.mean(e[np.isfinite(e)]))
        mse.append(np.mean(err[ok] ** 2))
        mae.append(np.mean(np.abs(err[ok])))
    return float(np.mean(means)), float(np.sqrt(np.mean(mse))), float(np.mean(mae))


def rejection_frequency(z_stats, level: float = 0.95) -> float:
    """Share of |z| above the two-sided critical value."""
    z = np.asarray(z_stats, dtype=float)
    if z.size == 0:
        raise ValueError("rejection frequency needs at least one replication")
    return float(np.mean(np.abs(z) > norm.ppf(1 - (1 - level) / 2)))


@dataclass(frozen=True)
class ExperimentSpec:
    """What to simulate and which estimators to run.

    ``dgp`` is a template; its ``n`` is replaced by each entry of
    ``n_list`` and its scenario / G process by the fields here when given.
    """

    dgp: DgpConfig = field(default_factory=DgpConfig)
    n_list: tuple = (100, 200, 400)
    reps: int = 200
    estimators: tuple = ("main",)
    scenario: str | None = None
    G_process: str | None = None
    seed: int = 0
    options: EstimateOptions = field(default_factory=EstimateOptions)
    level: float = 0.95
    max_failure_rate: float = 0.05
    label: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.estimators:
            raise ValueError("estimator list is empty")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimator(s) {sorted(bad)}; choose from {ESTIMATORS}")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def config(self, n: int) -> DgpConfig:
        over = {"n": int(n), "seed": self.seed}
        if self.scenario is not None:
            over["scenario"] = self.scenario
        if self.G_process is not None:
            over["G_process"] = self.G_process
        return replace(self.dgp, **over)

    def to_dict(self) -> dict:
        return {"dgp": self.dgp.to_dict(), "n_list": list(self.n_list), "reps": self.reps,
                "estimators": list(self.estimators), "scenario": self.scenario,
                "G_process": self.G_process, "seed": self.seed,
                "options": self.options.to_dict(), "level": self.level,
                "max_failure_rate": self.max_failure_rate, "label": self.label}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        if "dgp" in data:
            data["dgp"] = DgpConfig.from_dict(data["dgp"])
        if "options" in data:
            data["options"] = EstimateOptions.from_dict(data["options"])
        for key in ("n_list", "estimators"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, source) -> "ExperimentSpec":
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
        return cls.from_dict(json.loads(text))


@dataclass
class MetricRow:
    n: int
    estimator: str
    estimand: str
    truth: float
    mean: float
    rmse: float
    mae: float
    rejection: float | None = None
    reps: int = 0


def _truth_on(te: TrueEffects, rows, name: str) -> np.ndarray:
    return np.asarray(getattr(te, name), dtype=float)[rows]


def run_replication(spec: ExperimentSpec, n: int, rep: int) -> dict:
    """One simulated panel through every requested estimator.

    Returns ``{estimator: {estimand: (estimate, truth[, z])}}`` or
    ``{estimator: {"error": message}}``.
    """
    cfg = spec.config(n)
    panel, te = simulate_panel(cfg, rep=rep)
    out: dict = {}
    truth_rows = np.flatnonzero(panel.year > panel.year.min())

    if "main" in spec.estimators:
        try:
            res = estimate(panel, spec.options)
            rows = res.effects.rows
            rec = {"beta_K": (res.fit.beta_K, cfg.beta_K)}
            for name in ("AR", "DL", "SP", "TIL"):
                rec[name] = (np.asarray(getattr(res.effects, name)), _truth_on(te, rows, name))
            out["main"] = rec
        except Exception as exc:  # counted, not fatal
            out["main"] = {"error": f"{type(exc).__name__}: {exc}"}

    alt = [e for e in spec.estimators if e in ("proxy_exo", "alt1", "alt2", "alt_variants")]
    if alt:
        try:
            first = proxy_exogenous_markov(panel, spec.options)
        except Exception as exc:
            for e in alt:
                out[e] = {"error": f"first step: {type(exc).__name__}: {exc}"}
            return out
        W = build_weights(panel, spec.options.grouping, "baseline")
        mean_truth = {k: float(np.nanmean(_truth_on(te, truth_rows, k)))
                      for k in ("DL", "SP", "TIL")}
        if "proxy_exo" in alt:
            out["proxy_exo"] = {"beta_K": (first.beta_K, cfg.beta_K)}
        try:
            if "alt1" in alt:
                r = alt1_regression(first.omega, panel, W)
                out["alt1"] = {"DL": (r.dl_coef, mean_truth["DL"]),
                               "TIL": (r.spillover_coef, mean_truth["TIL"], r.spillover_z)}
            if "alt2" in alt:
                r = alt2_regression(first.omega, panel, W)
                out["alt2"] = {"DL": (r.dl_coef, mean_truth["DL"]),
                               "SP": (r.spillover_coef, mean_truth["SP"], r.spillover_z)}
            if "alt_variants" in alt:
                rec = {}
                for v, (source, _, _) in VARIANTS.items():
                    r = alt_variant(first.omega, panel, W, v)
                    truth = mean_truth["TIL"] if source == "G" else mean_truth["SP"]
                    rec[v] = (r.spillover_coef, truth, r.spillover_z)
                out["alt_variants"] = rec
        except Exception as exc:
            for e in ("alt1", "alt2", "alt_variants"):
                if e in alt and e not in out:
                    out[e] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


def _task(args):
    spec, n, rep = args
    return n, rep, run_replication(spec, n, rep)


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    rows: list
    failures: dict
    seeds: dict
    elapsed: float = 0.0
    aborted: bool = False

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])

    def row(self, estimator: str, estimand: str, n: int | None = None) -> MetricRow:
        for r in self.rows:
            if r.estimator == estimator and r.estimand == estimand and (n is None or r.n == n):
                return r
        raise KeyError((estimator, estimand, n))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "seeds": self.seeds,
                "failures": {f"{n}/{e}": c for (n, e), c in self.failures.items()},
                "elapsed_seconds": self.elapsed, "aborted": self.aborted,
                "rows": [asdict(r) for r in self.rows]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=float)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path) -> None:
        self.frame().to_csv(path, index=False)


def run_experiment(spec: ExperimentSpec, n_jobs: int = 1) -> ExperimentReport:
    """Simulate ``reps`` panels for each n and summarize every estimand.

    Replication ``r`` at size ``n`` uses ``simulate_panel(config(n), rep=r)``
    so results are identical for any ``n_jobs``.

    Raises
    ------
    ExperimentAborted
        If any estimator fails on more than ``max_failure_rate`` of the
        replications; the partial report is attached.
    """
    t0 = time.perf_counter()
    tasks = [(spec, n, r) for n in spec.n_list for r in range(spec.reps)]
    if n_jobs == 1:
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * n_jobs))))
    results.sort(key=lambda x: (x[0], x[1]))

    rows, failures = [], {}
    for n in spec.n_list:
        per_rep = [res for nn, _, res in results if nn == n]
        for est in spec.estimators:
            recs = [r.get(est, {}) for r in per_rep]
            ok = [r for r in recs if "error" not in r]
            failures[(n, est)] = len(recs) - len(ok)
            if not ok:
                continue
            for name in ok[0]:
                vals = [r[name] for r in ok]
                mean, rmse, mae = metrics([v[0] for v in vals], [v[1] for v in vals])
                truth = float(np.mean([np.nanmean(v[1]) for v in vals]))
                rej = (rejection_frequency([v[2] for v in vals], spec.level)
                       if len(vals[0]) > 2 else None)
                rows.append(MetricRow(n, est, name, truth, mean, rmse, mae, rej, len(vals)))
    report = ExperimentReport(spec, rows, failures,
                              {"master_seed": spec.seed, "rng": "SeedSequence(seed, (rep, firm))"},
                              time.perf_counter() - t0)
    worst = max(failures.items(), key=lambda kv: kv[1])
    if worst[1] / spec.reps > spec.max_failure_rate:
        report.aborted = True
        raise ExperimentAborted(f"estimator {worst[0][1]} failed in {worst[1]} of {spec.reps} "
                                f"replications at n={worst[0][0]}", report)
    return report
