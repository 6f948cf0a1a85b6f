"""Conformity scorers over (outcome, V): absolute residual and conformalised quantile band."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import DataError, ObservationTable
from .learners import LearnerModel, LearnerSpec, fit_weighted_quantile
from .nuisance import MeanPredictors, NuisanceError, weights

ABS = "abs"
CQR = "cqr"
VARIANTS = (ABS, CQR)


def _v(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[None, :] if v.ndim == 1 else v


@dataclass(frozen=True, eq=False)
class ConformityScorer:
    """Score ``R(y, v)``; intervals are its sublevel sets in ``y``.

    ``abs``: ``|y - eta(v)|``.  ``cqr``: ``max(lo(v) - y, y - hi(v))`` with the
    band sorted pointwise, so the score is negative strictly inside the band.
    """

    variant: str
    a: object
    eta_model: Optional[LearnerModel] = None
    lo_model: Optional[LearnerModel] = None
    hi_model: Optional[LearnerModel] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown score variant {self.variant!r}")
        if self.variant == ABS and self.eta_model is None:
            raise ValueError("abs scorer needs an eta model")
        if self.variant == CQR and (self.lo_model is None or self.hi_model is None):
            raise ValueError("cqr scorer needs both quantile models")

    @property
    def n_features(self) -> int:
        return (self.eta_model or self.lo_model).n_features

    def center(self, v) -> np.ndarray:
        return self.eta_model.predict(_v(v))

    def band(self, v) -> tuple[np.ndarray, np.ndarray]:
        v = _v(v)
        lo, hi = self.lo_model.predict(v), self.hi_model.predict(v)
        return np.minimum(lo, hi), np.maximum(lo, hi)

    def score(self, y, v) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.variant == ABS:
            return np.abs(y - self.center(v))
        lo, hi = self.band(v)
        return np.maximum(lo - y, y - hi)


def build_abs_scorer(mean: MeanPredictors, a=None) -> ConformityScorer:
    return ConformityScorer(ABS, mean.a if a is None else a, eta_model=mean.eta_model)


def build_cqr_scorer(table: ObservationTable, idx, a, alpha: float, g_model, kappa_model,
                     spec=LearnerSpec("quantile", {"base": "linear"}), features: str = "x") -> ConformityScorer:
    """Weighted quantile fits at levels ``alpha/2`` and ``1 - alpha/2`` over the treated source rows of ``idx``."""
    rows = np.asarray(idx, dtype=int)
    treated = rows[table.treated(a)[rows]]
    if treated.size == 0:
        raise NuisanceError(f"no source rows with treatment {a!r} for the quantile band")
    w = weights(table, treated, a, g_model, kappa_model, features)
    if not (w > 0).any():
        raise NuisanceError("all quantile-regression weights are zero")
    V, y = table.features(treated, "v"), table.outcomes(treated)
    lo = fit_weighted_quantile(V, y, w, alpha / 2, spec)
    hi = fit_weighted_quantile(V, y, w, 1 - alpha / 2, spec)
    return ConformityScorer(CQR, a, lo_model=lo, hi_model=hi, alpha=alpha)


def score_batch(scorer: ConformityScorer, table: ObservationTable, idx=None, y=None) -> np.ndarray:
    """Scores of rows ``idx``, using their observed outcomes unless ``y`` is given."""
    rows = np.arange(table.n) if idx is None else np.asarray(idx, dtype=int)
    if y is None:
        try:
            y = table.outcomes(rows)
        except DataError as err:
            raise DataError("score_batch needs an outcome for every row; pass y for target rows") from err
    return scorer.score(y, table.features(rows, "v"))
