"""Cross-validated convex stacking of base learners."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .base import Classifier, LearnerError, LearnerModel, LearnerSpec, Regressor, check_xy, freeze, pinball_loss

log = logging.getLogger(__name__)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _loss(task, level, y, pred, w):
    if task == "regression":
        return float(w @ (y - pred) ** 2 / w.sum())
    if task == "classification":
        p = np.clip(pred, 1e-9, 1 - 1e-9)
        return float(-(w @ (y * np.log(p) + (1 - y) * np.log1p(-p))) / w.sum())
    return float(w @ pinball_loss(y - pred, level) / w.sum())


def _grad(task, level, y, P, theta, w):
    pred = P @ theta
    if task == "regression":
        r = -2 * (y - pred)
    elif task == "classification":
        p = np.clip(pred, 1e-9, 1 - 1e-9)
        r = -(y / p - (1 - y) / (1 - p))
    else:
        r = np.where(y - pred >= 0, -level, 1 - level)
    return P.T @ (w * r) / w.sum()


def simplex_weights(P, y, w, task="regression", level=None, max_iter=2000, tol=1e-12):
    """Minimise the CV loss of ``P @ theta`` over the simplex by projected gradient."""
    K = P.shape[1]
    f = lambda th: _loss(task, level, y, P @ th, w)
    theta = np.full(K, 1.0 / K)
    best, best_f = theta, f(theta)
    if K > 1:
        if task == "quantile":
            scale = max(np.abs(P).max(), 1e-12)
            for it in range(1, max_iter + 1):
                theta = project_simplex(theta - (0.5 / scale) / np.sqrt(it) * _grad(task, level, y, P, theta, w))
                val = f(theta)
                if val < best_f:
                    best, best_f = theta, val
        else:
            step = 1.0
            cur_f = best_f
            for _ in range(max_iter):
                g = _grad(task, level, y, P, theta, w)
                while True:
                    new = project_simplex(theta - step * g)
                    d = new - theta
                    new_f = f(new)
                    if new_f <= cur_f + g @ d + (d @ d) / (2 * step) + 1e-15 or step < 1e-12:
                        break
                    step *= 0.5
                if cur_f - new_f < tol and np.abs(d).max() < 1e-10:
                    theta, cur_f = new, new_f
                    break
                theta, cur_f = new, new_f
                step *= 2.0
            best, best_f = theta, cur_f
    # a single base is always feasible
    vertex = [f(np.eye(K)[k]) for k in range(K)]
    k = int(np.argmin(vertex))
    if vertex[k] < best_f:
        best, best_f = np.eye(K)[k], vertex[k]
    return best, best_f, np.array(vertex)


def _output(model, X, task):
    return model.predict_proba(X) if task == "classification" else model.predict(X)


@dataclass(frozen=True, eq=False)
class StackModel(LearnerModel, Regressor, Classifier):
    members: tuple = ()
    weights: np.ndarray = None
    task: str = "regression"
    base_cv_loss: np.ndarray = None
    cv_loss: float = float("nan")

    def predict(self, X) -> np.ndarray:
        X = self._features(X)
        return np.column_stack([_output(m, X, self.task) for m in self.members]) @ self.weights

    def predict_proba(self, X) -> np.ndarray:
        return self.predict(X)


def fit_stack(X, y, base_specs, folds: int = 5, weights=None, task: str = "regression",
              level: float | None = None, seed: int = 0) -> StackModel:
    """Fit each base on K-1 folds, pick simplex weights on the out-of-fold predictions, refit on all rows."""
    from . import fit_any

    X, y, w = check_xy(X, y, weights, min_rows=2)
    specs = [LearnerSpec.parse(s) for s in base_specs]
    if not specs:
        raise LearnerError("stack needs at least one base learner")
    if folds < 2:
        raise LearnerError("stack needs folds >= 2")
    n = X.shape[0]
    fold = np.random.default_rng(seed).permutation(np.arange(n) % min(folds, n))
    P = np.zeros((n, len(specs)))
    ok = np.ones(len(specs), dtype=bool)
    for j, spec in enumerate(specs):
        for k in range(min(folds, n)):
            tr, te = fold != k, fold == k
            try:
                model = fit_any(task, X[tr], y[tr], w[tr], spec, level)
            except LearnerError as err:
                log.warning("stack base %s failed on fold %d: %s", spec.kind, k, err)
                ok[j] = False
                break
            P[te, j] = _output(model, X[te], task)
    if not ok.any():
        raise LearnerError("every base learner failed during stacking")
    kept = [s for s, good in zip(specs, ok) if good]
    theta, loss, vertex = simplex_weights(P[:, ok], y, w, task, level)
    members = tuple(fit_any(task, X, y, w, s, level) for s in kept)
    freeze(theta, vertex)
    return StackModel(
        kind="stack", n_features=X.shape[1], members=members, weights=theta, task=task,
        base_cv_loss=vertex, cv_loss=loss,
    )
