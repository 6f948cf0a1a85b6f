from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np


class LearnerError(ValueError):
    """Raised on invalid training data or learner configuration."""


KINDS = ("linear", "logistic", "tree-ensemble", "quantile", "stack", "constant")


@dataclass(frozen=True)
class LearnerSpec:
    """Learner kind plus hyperparameters.

    ``params`` by kind:

    linear / logistic
        ``penalty`` (fixed l1 strength; omit for CV over ``n_lambda`` values),
        ``folds`` (CV folds, default 5), ``seed``.
    tree-ensemble
        ``max_depth`` (3), ``n_trees`` (200), ``learning_rate`` (0.1),
        ``max_bins`` (255), ``seed``.
    quantile
        ``base``: ``"linear"`` | ``"tree"`` | ``"constant"``; tree params as above.
    stack
        ``bases``: list of specs (dicts or LearnerSpec), ``folds`` (5), ``seed``.
    constant
        ``value`` (optional; fitted weighted mean otherwise).
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def parse(cls, obj) -> "LearnerSpec":
        if isinstance(obj, LearnerSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        obj = dict(obj)
        kind = obj.pop("kind")
        return cls(kind, obj)

    def get(self, key, default=None):
        return self.params.get(key, default)

    def as_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            if k == "bases":
                v = [LearnerSpec.parse(b).as_dict() for b in v]
            out[k] = v
        return out


def check_xy(X, y=None, weights=None, min_rows: int = 1):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise LearnerError("feature matrix must be 2-D")
    n = X.shape[0]
    if n < min_rows:
        raise LearnerError(f"need at least {min_rows} rows, got {n}")
    if not np.isfinite(X).all():
        raise LearnerError("non-finite feature values")
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != n:
            raise LearnerError("len(y) does not match rows(X)")
        if not np.isfinite(y).all():
            raise LearnerError("non-finite targets")
    w = check_weights(weights, n)
    return X, y, w


def check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n:
        raise LearnerError("weights length does not match rows")
    if not np.isfinite(w).all() or (w < 0).any():
        raise LearnerError("weights must be finite and nonnegative")
    if not (w > 0).any():
        raise LearnerError("all weights are zero")
    return w


@dataclass(frozen=True, eq=False)
class LearnerModel:
    """Fitted model; immutable, and ``predict`` only accepts ``n_features`` columns."""

    kind: str
    n_features: int

    def _features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if self.n_features > 1 or X.size == 1 else X[:, None]
        if X.shape[1] != self.n_features:
            raise LearnerError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X


class Regressor:
    def predict(self, X) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class Classifier:
    def predict_proba(self, X) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)


@dataclass(frozen=True, eq=False)
class ConstantModel(LearnerModel, Regressor):
    value: float = 0.0
    classifier: bool = False

    def predict(self, X) -> np.ndarray:
        X = self._features(X)
        return np.full(X.shape[0], float(self.value))

    def predict_proba(self, X) -> np.ndarray:
        return self.predict(X)


def constant(value: float, n_features: int, classifier: bool = False) -> ConstantModel:
    return ConstantModel(kind="constant", n_features=n_features, value=float(value), classifier=classifier)


def weighted_quantile(y, weights, level: float) -> float:
    """Smallest ``c`` with weighted fraction of ``y <= c`` at least ``level``."""
    y = np.asarray(y, dtype=float)
    w = check_weights(weights, y.size)
    order = np.argsort(y, kind="stable")
    cum = np.cumsum(w[order])
    k = np.searchsorted(cum, level * cum[-1] * (1 - 1e-12), side="left")
    return float(y[order][min(k, y.size - 1)])


def pinball_loss(x, alpha: float):
    """Check loss: ``alpha*|x|`` for ``x >= 0`` and ``(1-alpha)*|x|`` for ``x < 0``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, alpha * np.abs(x), (1 - alpha) * np.abs(x))
    return out if out.ndim else float(out)


def trim_probability(p, lo: float = 0.025, hi: float = 0.975):
    """Clamp probabilities into ``[lo, hi]``."""
    if not 0 <= lo <= hi <= 1:
        raise ValueError("trim bounds must satisfy 0 <= lo <= hi <= 1")
    arr = np.asarray(p, dtype=float)
    if ((arr < 0) | (arr > 1) | ~np.isfinite(arr)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    out = np.clip(arr, lo, hi)
    return out if out.ndim else float(out)


def freeze(*arrays: Optional[np.ndarray]) -> None:
    for arr in arrays:
        if isinstance(arr, np.ndarray):
            arr.flags.writeable = False
