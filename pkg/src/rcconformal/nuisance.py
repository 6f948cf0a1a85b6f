"""Nuisance fits: treatment propensity, source membership, score CDFs and two-stage means.

Every fitted object is a :class:`~rcconformal.learners.LearnerModel`, so the
estimators never care whether a nuisance came from a learner, a closed-form
simulation oracle or a deliberately corrupted constant.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import DataError, ObservationTable, Row
from .learners import (
    LearnerError,
    LearnerModel,
    LearnerSpec,
    constant,
    fit_classifier,
    fit_regressor,
    trim_probability,
)

log = logging.getLogger(__name__)

TRIM = (0.025, 0.975)


class NuisanceError(ValueError):
    """Raised when a nuisance cannot be fitted or evaluated."""


# -- model wrappers -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FunctionModel(LearnerModel):
    """A fixed function of the feature matrix posing as a fitted model."""

    fn: Callable = None

    def predict(self, X) -> np.ndarray:
        X = self._features(X)
        return np.broadcast_to(np.asarray(self.fn(X), dtype=float), (X.shape[0],)).copy()

    def predict_proba(self, X) -> np.ndarray:
        return self.predict(X)


@dataclass(frozen=True, eq=False)
class TrimmedModel(LearnerModel):
    """Probability model whose outputs are clamped into ``bounds``."""

    base: LearnerModel = None
    bounds: tuple = TRIM

    def raw(self, X) -> np.ndarray:
        return np.clip(np.asarray(self.base.predict(X), dtype=float), 0.0, 1.0)

    def predict_proba(self, X) -> np.ndarray:
        return trim_probability(self.raw(X), *self.bounds)

    predict = predict_proba


@dataclass(frozen=True, eq=False)
class ClampedModel(LearnerModel):
    """Model clamped into [0, 1]; classifiers already predict probabilities."""

    base: LearnerModel = None

    def predict(self, X) -> np.ndarray:
        return np.clip(np.asarray(self.base.predict(X), dtype=float), 0.0, 1.0)

    predict_proba = predict


def trimmed(model: LearnerModel, bounds=TRIM) -> TrimmedModel:
    return TrimmedModel(kind=model.kind, n_features=model.n_features, base=model, bounds=tuple(bounds))


def clamped(model: LearnerModel) -> ClampedModel:
    return ClampedModel(kind=model.kind, n_features=model.n_features, base=model)


def function_model(fn: Callable, n_features: int, kind: str = "constant") -> FunctionModel:
    return FunctionModel(kind=kind, n_features=n_features, fn=fn)


# -- learner menu ---------------------------------------------------------------


def _stack(*bases) -> LearnerSpec:
    return LearnerSpec("stack", {"bases": list(bases), "folds": 5})


@dataclass(frozen=True)
class NuisanceSpec:
    """Learner choice for every nuisance role."""

    g: LearnerSpec = field(default_factory=lambda: _stack("logistic", "tree-ensemble"))
    kappa: LearnerSpec = field(default_factory=lambda: _stack("logistic", "tree-ensemble"))
    mu: LearnerSpec = field(default_factory=lambda: _stack("linear", "tree-ensemble"))
    eta: LearnerSpec = field(default_factory=lambda: _stack("linear", "tree-ensemble"))
    q: LearnerSpec = field(default_factory=lambda: _stack("logistic", "tree-ensemble"))
    m: LearnerSpec = field(default_factory=lambda: _stack("linear", "tree-ensemble"))
    quantile: LearnerSpec = field(
        default_factory=lambda: _stack({"kind": "quantile", "base": "linear"}, {"kind": "quantile", "base": "tree"})
    )
    trim: tuple = TRIM

    @classmethod
    def fast(cls, trim=TRIM) -> "NuisanceSpec":
        """Penalised linear/logistic learners throughout; used by the Monte Carlo harness."""
        return cls(
            g=LearnerSpec("logistic"), kappa=LearnerSpec("logistic"), mu=LearnerSpec("linear"),
            eta=LearnerSpec("linear"), q=LearnerSpec("logistic"), m=LearnerSpec("linear"),
            quantile=LearnerSpec("quantile", {"base": "linear"}), trim=tuple(trim),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceSpec":
        d = dict(d)
        trim = tuple(d.pop("trim", TRIM))
        preset = d.pop("preset", "default")
        base = cls.fast(trim) if preset == "fast" else replace(cls(), trim=trim)
        unknown = set(d) - {"g", "kappa", "mu", "eta", "q", "m", "quantile"}
        if unknown:
            raise LearnerError(f"unknown nuisance roles: {sorted(unknown)}")
        return replace(base, **{k: LearnerSpec.parse(v) for k, v in d.items()})

    def as_dict(self) -> dict:
        out = {k: getattr(self, k).as_dict() for k in ("g", "kappa", "mu", "eta", "q", "m", "quantile")}
        out["trim"] = list(self.trim)
        return out


# -- propensities and weights --------------------------------------------------


def _rows(table: ObservationTable, idx) -> np.ndarray:
    return np.arange(table.n) if idx is None else np.asarray(idx, dtype=int)


def fit_g(table: ObservationTable, a, spec=LearnerSpec("logistic"), idx=None, features: str = "x",
          trim=TRIM) -> TrimmedModel:
    """P(A = a | features, S = 1), fitted on the source rows among ``idx``."""
    rows = _rows(table, idx)
    src = rows[table.s[rows] == 1]
    label = table.treated(a)[src].astype(float)
    if src.size == 0 or label.min() == label.max():
        raise NuisanceError(f"source rows need both A = {a!r} and A != {a!r} to fit the propensity")
    model = fit_classifier(table.features(src, features), label, None, spec)
    return trimmed(model, trim)


def fit_kappa(table: ObservationTable, spec=LearnerSpec("logistic"), idx=None, trim=TRIM) -> TrimmedModel:
    """P(S = 1 | V), fitted on every row among ``idx``."""
    rows = _rows(table, idx)
    s = table.s[rows].astype(float)
    if s.size == 0 or s.min() == s.max():
        raise NuisanceError("source membership model needs both source and target rows")
    return trimmed(fit_classifier(table.features(rows, "v"), s, None, spec), trim)


def _check_denominator(p: np.ndarray, what: str) -> None:
    if (p <= 0).any():
        raise NuisanceError(f"{what} of 0 in a weight denominator; probabilities must be trimmed")


def compute_weight(row: Row, a, g_model, kappa_model, features: str = "x") -> float:
    """Single-row weight ``I(A=a) S (1 - kappa) / (g * kappa)``."""
    if row.s != 1 or row.a != a:
        return 0.0
    x = row.x if features == "x" else row.v
    g = float(g_model.predict_proba(x[None, :])[0])
    k = float(kappa_model.predict_proba(row.v[None, :])[0])
    _check_denominator(np.array([g]), "propensity")
    _check_denominator(np.array([k]), "source probability")
    return (1.0 - k) / (g * k)


def weights(table: ObservationTable, idx, a, g_model, kappa_model, features: str = "x") -> np.ndarray:
    """Vectorised :func:`compute_weight` over rows ``idx``."""
    rows = _rows(table, idx)
    out = np.zeros(rows.size)
    hit = table.treated(a)[rows]
    if hit.any():
        sel = rows[hit]
        g = np.asarray(g_model.predict_proba(table.features(sel, features)), dtype=float)
        k = np.asarray(kappa_model.predict_proba(table.features(sel, "v")), dtype=float)
        _check_denominator(g, "propensity")
        _check_denominator(k, "source probability")
        out[hit] = (1.0 - k) / (g * k)
    return out


def shift_ratio(table: ObservationTable, idx, kappa_model) -> np.ndarray:
    """``S (1 - kappa) / kappa`` over rows ``idx``."""
    rows = _rows(table, idx)
    k = np.asarray(kappa_model.predict_proba(table.features(rows, "v")), dtype=float)
    _check_denominator(k, "source probability")
    return np.where(table.s[rows] == 1, (1.0 - k) / k, 0.0)


# -- two-stage mean -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeanPredictors:
    """Stage 1 regresses Y on X among treated source rows; stage 2 regresses that fit on V among source rows."""

    a: object
    mu_model: LearnerModel
    eta_model: LearnerModel
    features: str = "x"

    def predict(self, v) -> np.ndarray:
        return self.eta_model.predict(v)


def fit_two_stage_mean(table: ObservationTable, a, spec: NuisanceSpec = None, idx=None,
                       features: str = "x") -> MeanPredictors:
    """With ``features='v'`` both stages see only V, which ignores the hidden confounders."""
    spec = spec or NuisanceSpec.fast()
    rows = _rows(table, idx)
    treated = rows[table.treated(a)[rows]]
    if treated.size < 2:
        raise NuisanceError(f"no source rows with treatment {a!r} to fit the outcome mean")
    mu = fit_regressor(table.features(treated, features), table.outcomes(treated), None, spec.mu)
    src = rows[table.s[rows] == 1]
    stage1 = mu.predict(table.features(src, features))
    if features == "v":
        eta = mu
    else:
        eta = fit_regressor(table.features(src, "v"), stage1, None, spec.eta)
    return MeanPredictors(a=a, mu_model=mu, eta_model=eta, features=features)


# -- score CDFs ------------------------------------------------------------------


def fit_q(table: ObservationTable, idx, a, r_pin: float, scorer, spec=LearnerSpec("logistic"),
          features: str = "x") -> ClampedModel:
    """P(score <= r_pin | features, A = a, S = 1) on the treated source rows among ``idx``."""
    if not np.isfinite(r_pin):
        raise NuisanceError("r_pin must be finite")
    rows = _rows(table, idx)
    treated = rows[table.treated(a)[rows]]
    if treated.size == 0:
        raise NuisanceError(f"no source rows with treatment {a!r} to fit the score CDF")
    X = table.features(treated, features)
    hit = (scorer.score(table.outcomes(treated), table.features(treated, "v")) <= r_pin).astype(float)
    if hit.min() == hit.max():
        warnings.warn(f"score indicator at r = {r_pin:.4g} is constant on the fold; using a constant model",
                      RuntimeWarning, stacklevel=2)
        return clamped(constant(hit[0], X.shape[1], classifier=True))
    try:
        model = fit_classifier(X, hit, None, spec)
    except LearnerError as err:
        warnings.warn(f"score CDF fit failed ({err}); using the empirical constant", RuntimeWarning, stacklevel=2)
        model = constant(hit.mean(), X.shape[1], classifier=True)
    return clamped(model)


def fit_m(table: ObservationTable, idx, q_model, spec=LearnerSpec("linear"), features: str = "x") -> ClampedModel:
    """E[q(X) | V, S = 1]: regress the fitted score CDF on V over the source rows among ``idx``."""
    rows = _rows(table, idx)
    src = rows[table.s[rows] == 1]
    if src.size == 0:
        raise NuisanceError("no source rows to fit the marginalised score CDF")
    target = q_model.predict(table.features(src, features))
    V = table.features(src, "v")
    if np.ptp(target) == 0:
        return clamped(constant(target[0], V.shape[1]))
    return clamped(fit_regressor(V, target, None, spec))


# -- providers --------------------------------------------------------------------


class LearnedNuisances:
    """Fits every nuisance from data with the learners named in ``spec``.

    ``features='v'`` gives the comparator that ignores the hidden confounders:
    the propensity and score CDF see V only and the marginalised CDF equals the
    CDF itself.
    """

    def __init__(self, spec: Optional[NuisanceSpec] = None, features: str = "x"):
        self.spec = spec or NuisanceSpec()
        self.features = features

    @property
    def naive(self) -> bool:
        return self.features == "v"

    def g(self, table, idx, a):
        return fit_g(table, a, self.spec.g, idx, self.features, self.spec.trim)

    def kappa(self, table, idx):
        return fit_kappa(table, self.spec.kappa, idx, self.spec.trim)

    def mean(self, table, idx, a):
        return fit_two_stage_mean(table, a, self.spec, idx, self.features)

    def q(self, table, idx, a, r_pin, scorer):
        return fit_q(table, idx, a, r_pin, scorer, self.spec.q, self.features)

    def m(self, table, idx, a, r_pin, q_model):
        if self.naive:
            return q_model
        return fit_m(table, idx, q_model, self.spec.m, self.features)


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Nuisances for one treatment level, with the score CDFs pinned at ``r_pin``."""

    a: object
    r_pin: float
    q_model: LearnerModel
    m_model: LearnerModel
    g_model: LearnerModel
    kappa_model: LearnerModel
    trim: tuple = TRIM
    features: str = "x"

    def evaluate(self, table: ObservationTable, idx=None) -> dict:
        """Per-row arrays ``q``, ``m``, ``ratio`` (= S(1-kappa)/kappa) and ``w`` over rows ``idx``.

        ``q`` is only evaluated on source rows (it multiplies S everywhere in
        the influence curve); target entries are left at 0.
        """
        rows = _rows(table, idx)
        src = table.s[rows] == 1
        q = np.zeros(rows.size)
        if self.features == "v":
            q = self.q_model.predict(table.features(rows, "v"))
        elif src.any():
            q[src] = self.q_model.predict(table.features(rows[src], "x"))
        m = self.m_model.predict(table.features(rows, "v"))
        return {
            "q": np.clip(q, 0, 1),
            "m": np.clip(m, 0, 1),
            "ratio": shift_ratio(table, rows, self.kappa_model),
            "w": weights(table, rows, self.a, self.g_model, self.kappa_model, self.features),
            "s": table.s[rows].astype(float),
        }


def fit_bundle(provider, table: ObservationTable, idx, a, r_pin: float, scorer, g_model, kappa_model) -> NuisanceBundle:
    q = provider.q(table, idx, a, r_pin, scorer)
    m = provider.m(table, idx, a, r_pin, q)
    return NuisanceBundle(
        a=a, r_pin=float(r_pin), q_model=q, m_model=m, g_model=g_model, kappa_model=kappa_model,
        trim=getattr(getattr(provider, "spec", None), "trim", TRIM), features=getattr(provider, "features", "x"),
    )
