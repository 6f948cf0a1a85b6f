"""Monte Carlo coverage/length experiments over a scenario grid."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..data import DataError, make_splits
from ..intervals import ite_bounds
from ..nuisance import LearnedNuisances, NuisanceSpec
from ..pipeline import PipelineConfig, fit_pipeline
from .dgp import DgpConfig, generate
from .oracle import CorruptedNuisances, OracleNuisances

log = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "n", "k_u", "source_rate", "method", "score", "a", "alpha",
    "coverage", "se", "avg_length", "infinite_rate", "reps", "failures",
)


@dataclass(frozen=True)
class ReplicationSpec:
    """Everything a single replication needs besides its seed.

    ``nuisances``: ``"learned"`` or ``"oracle"``.  ``corrupt`` maps nuisance
    roles (g, kappa, q, m) to the constant replacing them.  ``ite`` also fits
    every arm at alpha/2 and records Bonferroni ITE coverage.
    """

    dgp: DgpConfig = field(default_factory=DgpConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    nuisance: NuisanceSpec = field(default_factory=NuisanceSpec.fast)
    nuisances: str = "learned"
    oracle_trim: Optional[tuple] = None
    corrupt: dict = field(default_factory=dict)
    ite: bool = False


def _providers(spec: ReplicationSpec):
    if spec.nuisances == "oracle":
        full = OracleNuisances(spec.dgp, spec.oracle_trim, "x")
        naive = OracleNuisances(spec.dgp, spec.oracle_trim, "v")
    elif spec.nuisances == "learned":
        full = LearnedNuisances(spec.nuisance, "x")
        naive = LearnedNuisances(spec.nuisance, "v")
    else:
        raise ValueError(f"unknown nuisance source {spec.nuisances!r}")
    if spec.corrupt:
        full = CorruptedNuisances(full, spec.corrupt)
    return full, naive


def run_replication(spec: ReplicationSpec, seed) -> list[dict]:
    """One draw, one split, every arm; rows carry per-level, pooled and (optionally) ITE coverage.

    A failure yields a single row with ``status='failed'`` and the reason.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_seed, split_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    try:
        sample = generate(replace(spec.dgp, seed=data_seed))
        table = sample.table
        splits = make_splits(table, spec.pipeline.fractions, seed=split_seed)
        full, naive = _providers(spec)
        alpha = spec.pipeline.alpha
        alphas = (alpha, alpha / 2) if spec.ite else (alpha,)
        arms = fit_pipeline(table, splits, spec.pipeline, spec.nuisance, full, naive, levels=[0, 1], alphas=alphas)
    except (DataError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        log.warning("replication failed: %s", err)
        return [{"status": "failed", "reason": f"{type(err).__name__}: {err}",
                 "detail": traceback.format_exc(limit=3)}]

    target = sample.s == 0
    V = sample.v[target]
    truth = {0: sample.y0[target], 1: sample.y1[target]}
    rows, batches = [], {}
    for arm in arms:
        b = arm.intervals(V)
        batches[(arm.method, arm.score, arm.a, arm.alpha)] = b
        hit = b.contains(truth[arm.a])
        width = b.width
        finite = np.isfinite(width)
        rows.append({
            "status": "ok", "method": arm.method, "score": arm.score, "a": arm.a, "alpha": arm.alpha,
            "covered": int(hit.sum()), "n": int(hit.size), "length_sum": float(width[finite].sum()),
            "n_finite": int(finite.sum()), "rhat": arm.rhat.value, "rhat_status": arm.rhat.status,
        })
    # pooled over the two levels
    for key in sorted({(r["method"], r["score"], r["alpha"]) for r in rows}):
        parts = [r for r in rows if (r["method"], r["score"], r["alpha"]) == key and r["a"] in (0, 1)]
        rows.append({
            "status": "ok", "method": key[0], "score": key[1], "a": "pooled", "alpha": key[2],
            "covered": sum(p["covered"] for p in parts), "n": sum(p["n"] for p in parts),
            "length_sum": sum(p["length_sum"] for p in parts), "n_finite": sum(p["n_finite"] for p in parts),
            "rhat": math.nan, "rhat_status": ",".join(sorted({p["rhat_status"] for p in parts})),
        })
    if spec.ite:
        half = alpha / 2
        for method, score in sorted({(r["method"], r["score"]) for r in rows}):
            b1, b0 = batches[(method, score, 1, half)], batches[(method, score, 0, half)]
            lo, hi = ite_bounds(b1.lower, b1.upper, b0.lower, b0.upper)
            empty = b1.empty | b0.empty
            ite = truth[1] - truth[0]
            hit = ~empty & (lo <= ite) & (ite <= hi)
            width = np.where(empty, 0.0, hi - lo)
            finite = np.isfinite(width)
            rows.append({
                "status": "ok", "method": method, "score": score, "a": "ite", "alpha": alpha,
                "covered": int(hit.sum()), "n": int(hit.size), "length_sum": float(width[finite].sum()),
                "n_finite": int(finite.sum()), "rhat": math.nan, "rhat_status": "",
            })
    return rows


def replication_seeds(master_seed: int, reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(reps)


@dataclass(frozen=True)
class Scenario:
    n: int
    k_u: int
    source_rate: float


@dataclass
class McResult:
    """Aggregated coverage per (scenario, method, score, level, alpha).

    ``coverage`` is the mean of per-replication coverage rates and ``se`` its
    Monte Carlo standard error; ``avg_length`` averages finite widths only.
    """

    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def get(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def one(self, **match) -> dict:
        hits = self.get(**match)
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
            out.writeheader()
            for r in self.rows:
                out.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def write_panels(self, path) -> None:
        """Long-format table: one line per (panel, x, series) with coverage and length."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["panel", "x_name", "x", "method", "score", "a", "coverage", "se", "avg_length"])
            for r in self.rows:
                for panel, x_name in (("vs_n", "n"), ("vs_k_u", "k_u"), ("vs_source_rate", "source_rate")):
                    out.writerow([panel, x_name, r[x_name], r["method"], r["score"], r["a"],
                                  repr(r["coverage"]), repr(r["se"]), repr(r["avg_length"])])


def aggregate(scenario: Scenario, rep_rows: Sequence[list[dict]]) -> tuple[list[dict], int]:
    failures = sum(1 for rows in rep_rows if rows and rows[0]["status"] == "failed")
    groups: dict = {}
    for rows in rep_rows:
        for r in rows:
            if r["status"] != "ok":
                continue
            groups.setdefault((r["method"], r["score"], str(r["a"]), r["alpha"]), []).append(r)
    out = []
    for (method, score, a, alpha), rs in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        cov = np.array([r["covered"] / r["n"] for r in rs if r["n"] > 0])
        n_fin = sum(r["n_finite"] for r in rs)
        n_all = sum(r["n"] for r in rs)
        out.append({
            "n": scenario.n, "k_u": scenario.k_u, "source_rate": scenario.source_rate,
            "method": method, "score": score, "a": a, "alpha": alpha,
            "coverage": float(cov.mean()) if cov.size else math.nan,
            "se": float(cov.std(ddof=1) / math.sqrt(cov.size)) if cov.size > 1 else math.nan,
            "avg_length": sum(r["length_sum"] for r in rs) / n_fin if n_fin else math.inf,
            "infinite_rate": 1 - n_fin / n_all if n_all else math.nan,
            "reps": int(cov.size), "failures": failures,
            "cover_rates": cov,
        })
    return out, failures


def _job(args):
    spec, seed = args
    return run_replication(spec, seed)


def run_experiment(base: ReplicationSpec, n_values: Sequence[int], k_u_values: Sequence[int],
                   source_rates: Sequence[float] = (0.9,), reps: int = 200, seed: int = 0,
                   workers: int = 1) -> McResult:
    """Every scenario of the grid, ``reps`` replications each, seeded from ``seed``.

    Scenario ``i`` uses spawned seeds ``SeedSequence(seed).spawn(...)[i]``, so
    results do not depend on worker count or completion order.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    scenarios = [Scenario(n, k, rate) for n, k, rate in itertools.product(n_values, k_u_values, source_rates)]
    master = np.random.SeedSequence(seed).spawn(len(scenarios))
    result = McResult()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for sc, ss in zip(scenarios, master):
            dgp = replace(base.dgp, n=sc.n, k_u=sc.k_u, target_source_rate=sc.source_rate, intercept_b=None)
            spec = replace(base, dgp=dgp.calibrated())
            jobs = [(spec, s) for s in ss.spawn(reps)]
            rep_rows = list(pool.map(_job, jobs)) if pool else [_job(j) for j in jobs]
            rows, failures = aggregate(sc, rep_rows)
            result.rows.extend(rows)
            result.failures[sc] = failures
    finally:
        if pool:
            pool.shutdown()
    return result
