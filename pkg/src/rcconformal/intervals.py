"""Prediction intervals: sublevel sets of a scorer at an estimated quantile, and ITE combinations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .quantile_estimators import QuantileEstimate
from .scores import ABS, ConformityScorer

PREDICTION_COLUMNS = ("row_id", "a", "lower", "upper", "method", "alpha")


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    a: object = None
    alpha: float = 0.1
    empty: bool = False

    def __post_init__(self):
        if not self.empty and self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return 0.0 if self.empty else self.upper - self.lower

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.empty:
            return np.zeros(y.shape, dtype=bool)
        return (self.lower <= y) & (y <= self.upper)


def bounds(scorer: ConformityScorer, v, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised inversion: ``(lower, upper, empty)`` arrays over the rows of ``v``."""
    v = np.asarray(v, dtype=float)
    v = v[None, :] if v.ndim == 1 else v
    n = v.shape[0]
    if r == math.inf:
        return np.full(n, -math.inf), np.full(n, math.inf), np.zeros(n, dtype=bool)
    if scorer.variant == ABS:
        c = scorer.center(v)
        if r < 0:
            return np.full(n, math.nan), np.full(n, math.nan), np.ones(n, dtype=bool)
        return c - r, c + r, np.zeros(n, dtype=bool)
    if r == -math.inf:
        return np.full(n, math.nan), np.full(n, math.nan), np.ones(n, dtype=bool)
    lo, hi = scorer.band(v)
    lower, upper = lo - r, hi + r
    empty = lower > upper
    return np.where(empty, math.nan, lower), np.where(empty, math.nan, upper), empty


def invert(scorer: ConformityScorer, v, rhat: QuantileEstimate) -> PredictionInterval:
    """``{y : score(y, v) <= rhat}`` for a single covariate vector."""
    if scorer.a != rhat.a and rhat.a is not None:
        raise ValueError(f"scorer is for treatment {scorer.a!r} but the quantile is for {rhat.a!r}")
    lo, hi, empty = bounds(scorer, np.asarray(v, dtype=float).ravel(), rhat.value)
    if empty[0]:
        return PredictionInterval(math.nan, math.nan, rhat.a, rhat.alpha, empty=True)
    return PredictionInterval(float(lo[0]), float(hi[0]), rhat.a, rhat.alpha)


def ite_bonferroni(c1: PredictionInterval, c0: PredictionInterval) -> PredictionInterval:
    """``(c1.lower - c0.upper, c1.upper - c0.lower)``; each arm should be at miscoverage alpha/2."""
    if not math.isclose(c1.alpha, c0.alpha):
        raise ValueError("ITE arms must share the same alpha")
    if c1.empty or c0.empty:
        return PredictionInterval(math.nan, math.nan, "ite", 2 * c1.alpha, empty=True)
    return PredictionInterval(c1.lower - c0.upper, c1.upper - c0.lower, "ite", 2 * c1.alpha)


def ite_bounds(lo1, hi1, lo0, hi0) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(lo1) - np.asarray(hi0), np.asarray(hi1) - np.asarray(lo0)


@dataclass(frozen=True, eq=False)
class IntervalBatch:
    """Intervals for many rows at one treatment level."""

    a: object
    method: str
    alpha: float
    lower: np.ndarray
    upper: np.ndarray
    empty: np.ndarray

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return ~self.empty & (self.lower <= y) & (y <= self.upper)

    @property
    def width(self) -> np.ndarray:
        return np.where(self.empty, 0.0, self.upper - self.lower)


def predict_batch(scorers: Mapping, rhats: Mapping, v, levels: Sequence | None = None) -> dict:
    """Invert each level's scorer at its quantile for every row of ``v``."""
    levels = list(scorers) if levels is None else list(levels)
    out = {}
    for a in levels:
        if a not in scorers or a not in rhats:
            raise KeyError(f"no scorer/quantile pair for treatment {a!r}")
        r = rhats[a]
        lo, hi, empty = bounds(scorers[a], v, r.value)
        out[a] = IntervalBatch(a, r.method, r.alpha, lo, hi, empty)
    return out


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_predictions(path, ids, batches: Sequence[IntervalBatch]) -> None:
    """Prediction CSV, one row per (unit, level, method); empty sets carry nan bounds."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PREDICTION_COLUMNS)
        for b in batches:
            for i, rid in enumerate(ids):
                out.writerow([rid, b.a, _fmt(b.lower[i]), _fmt(b.upper[i]), b.method, repr(float(b.alpha))])


def read_predictions(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(PREDICTION_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: prediction file lacks columns {sorted(set(PREDICTION_COLUMNS) - set(rows[0]))}")
    for r in rows:
        r["lower"], r["upper"], r["alpha"] = float(r["lower"]), float(r["upper"]), float(r["alpha"])
    return rows
