"""Weighted quantile regression: minimise the sample-weighted pinball loss.

Linear models are solved exactly as a linear program; tree models use the
histogram GBM with quantile loss, whose leaf values are per-leaf weighted
empirical quantiles of the residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .base import LearnerError, LearnerModel, LearnerSpec, Regressor, check_xy, constant, freeze, weighted_quantile
from .trees import fit_tree_regressor


@dataclass(frozen=True, eq=False)
class LinearQuantileModel(LearnerModel, Regressor):
    coef: np.ndarray = None
    intercept: float = 0.0
    level: float = 0.5

    def predict(self, X) -> np.ndarray:
        return self._features(X) @ self.coef + self.intercept


def fit_linear_quantile(X, y, weights, level: float) -> LinearQuantileModel:
    X, y, w = check_xy(X, y, weights, min_rows=1)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    n, p = X.shape
    mean = X.mean(0) if n else np.zeros(p)
    sd = X.std(0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Z = (X - mean) / sd
    w = w / w.mean()
    # variables: [b0, beta (p), u (n), v (n)];  b0 + Z beta + u - v = y
    cost = np.concatenate([np.zeros(p + 1), level * w, (1 - level) * w])
    eye = sp.identity(n, format="csc")
    A = sp.hstack([sp.csc_matrix(np.ones((n, 1))), sp.csc_matrix(Z), eye, -eye], format="csc")
    bounds = [(None, None)] * (p + 1) + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise LearnerError(f"quantile LP failed: {res.message}")
    b0, beta = res.x[0], res.x[1:p + 1]
    coef = beta / sd
    freeze(coef)
    return LinearQuantileModel(
        kind="quantile", n_features=p, coef=coef, intercept=float(b0 - mean @ coef), level=level
    )


def fit_quantile_model(X, y, weights, level: float, spec: LearnerSpec):
    if not 0 < level < 1:
        raise LearnerError("quantile level must lie in (0, 1)")
    base = spec.get("base", "linear") if spec.kind == "quantile" else spec.kind
    if base == "linear":
        return fit_linear_quantile(X, y, weights, level)
    if base in ("tree", "tree-ensemble"):
        return fit_tree_regressor(X, y, weights, spec, quantile=level)
    if base == "constant":
        X, y, w = check_xy(X, y, weights)
        return constant(weighted_quantile(y, w, level), X.shape[1])
    raise LearnerError(f"unknown quantile base {base!r}")
