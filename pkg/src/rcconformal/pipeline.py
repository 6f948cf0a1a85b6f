"""End-to-end split-conformal fit shared by the simulation harness and the CLI.

Per treatment level and score type: propensity and source models on the
training rows, scorer on the training rows, then the requested quantile
estimators, each returning a scorer/quantile pair that the intervals module
inverts for target rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import ObservationTable, SplitAssignment
from .intervals import IntervalBatch, bounds
from .nuisance import LearnedNuisances, NuisanceSpec
from .quantile_estimators import METHODS, QuantileEstimate, dml_rhat, plugin_rhat, weighted_cal_rhat
from .scores import ABS, CQR, VARIANTS, ConformityScorer, build_abs_scorer, build_cqr_scorer


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = 0.1
    methods: tuple = ("weighted", "dml")
    scores: tuple = (ABS, CQR)
    fractions: tuple = (0.5, 0.5)
    plugin_grid: int = 50
    plugin_refine: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; expected a subset of {METHODS}")
        bad = set(self.scores) - set(VARIANTS)
        if bad:
            raise ValueError(f"unknown score types {sorted(bad)}; expected a subset of {VARIANTS}")
        if not self.methods or not self.scores:
            raise ValueError("methods and scores must be nonempty")


@dataclass(frozen=True, eq=False)
class FittedArm:
    method: str
    score: str
    a: object
    scorer: ConformityScorer
    rhat: QuantileEstimate

    @property
    def alpha(self) -> float:
        return self.rhat.alpha

    @property
    def label(self) -> str:
        return f"{self.method}/{self.score}"

    def intervals(self, V) -> IntervalBatch:
        """Batch labelled ``method/score`` so arms stay distinct in prediction files."""
        lo, hi, empty = bounds(self.scorer, V, self.rhat.value)
        return IntervalBatch(self.a, self.label, self.alpha, lo, hi, empty)


class _Cache:
    """Fits each propensity, source model and scorer once per (features, level, score)."""

    def __init__(self, table, idx, spec: NuisanceSpec):
        self.table, self.idx, self.spec = table, idx, spec
        self.store = {}

    def get(self, key, make):
        if key not in self.store:
            self.store[key] = make()
        return self.store[key]

    def kappa(self, provider):
        return self.get(("kappa", type(provider).__name__), lambda: provider.kappa(self.table, self.idx))

    def g(self, provider, a):
        return self.get(("g", provider.features, a), lambda: provider.g(self.table, self.idx, a))

    def scorer(self, provider, score, a, alpha):
        def make():
            g, k = self.g(provider, a), self.kappa(provider)
            if score == ABS:
                return build_abs_scorer(provider.mean(self.table, self.idx, a))
            return build_cqr_scorer(self.table, self.idx, a, alpha, g, k, self.spec.quantile, provider.features)

        key = ("scorer", provider.features, score, a, alpha if score == CQR else None)
        return self.get(key, make)


def fit_pipeline(table: ObservationTable, splits: SplitAssignment, config: PipelineConfig,
                 spec: Optional[NuisanceSpec] = None, provider=None, naive_provider=None,
                 levels: Optional[Sequence] = None, alphas: Optional[Sequence[float]] = None) -> list[FittedArm]:
    """Fit every (method, score, level, alpha) arm; ``alphas`` defaults to ``(config.alpha,)``."""
    spec = spec or NuisanceSpec()
    provider = provider or LearnedNuisances(spec, "x")
    if naive_provider is None and "naive-dml" in config.methods:
        if not isinstance(provider, LearnedNuisances):
            raise ValueError("naive-dml with a custom provider needs an explicit naive_provider")
        naive_provider = LearnedNuisances(provider.spec, "v")
    levels = table.levels if levels is None else list(levels)
    alphas = (config.alpha,) if alphas is None else tuple(alphas)
    cache = _Cache(table, splits.train, spec)
    arms = []
    for alpha in alphas:
        for score in config.scores:
            for a in levels:
                for method in config.methods:
                    prov = naive_provider if method == "naive-dml" else provider
                    scorer = cache.scorer(prov, score, a, alpha)
                    g, kappa = cache.g(prov, a), cache.kappa(prov)
                    if method == "weighted":
                        r = weighted_cal_rhat(table, splits.cal, a, alpha, scorer, g, kappa)
                    elif method in ("dml", "naive-dml"):
                        r = dml_rhat(table, splits, a, alpha, scorer, prov, g, kappa)
                    else:
                        r = plugin_rhat(table, splits.train2, splits.cal, a, alpha, scorer, prov,
                                        n_grid=config.plugin_grid, refine=config.plugin_refine)
                    arms.append(FittedArm(method, score, a, scorer, r))
    return arms


def arm_key(arm: FittedArm) -> tuple:
    return (arm.method, arm.score, arm.a, arm.alpha)


def coverage_summary(arms: Sequence[FittedArm], V, truth: dict) -> list[dict]:
    """Per-arm coverage and mean length of finite intervals against ``truth[a]`` outcomes."""
    out = []
    for arm in arms:
        b = arm.intervals(V)
        hit = b.contains(truth[arm.a])
        finite = np.isfinite(b.width)
        out.append({
            "method": arm.method, "score": arm.score, "a": arm.a, "alpha": arm.alpha,
            "coverage": float(hit.mean()), "length": float(b.width[finite].mean()) if finite.any() else math.inf,
            "n_infinite": int((~finite).sum()), "n_empty": int(b.empty.sum()), "status": arm.rhat.status,
        })
    return out
