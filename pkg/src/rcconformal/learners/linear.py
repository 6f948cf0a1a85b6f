"""L1-penalised least squares and logistic regression by coordinate descent.

Both fit on standardised features with an unpenalised intercept.  Without a
fixed ``penalty`` the strength is chosen by K-fold CV over a 10-value
logarithmic grid running from the all-zero penalty ``lambda_max`` down to
``1e-3 * lambda_max``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from .base import Classifier, LearnerError, LearnerModel, LearnerSpec, Regressor, check_xy, freeze

N_LAMBDA = 10
LAMBDA_RATIO = 1e-3


@njit(cache=True)
def _cd(G, c, beta, lam, tol, max_iter):
    # minimises 0.5 b'Gb - c'b + lam |b|_1 in place
    p = G.shape[0]
    Gb = G @ beta
    for _ in range(max_iter):
        delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - Gb[j] + gjj * beta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            d = new - beta[j]
            if d != 0.0:
                for k in range(p):
                    Gb[k] += G[k, j] * d
                beta[j] = new
                step = abs(d) * np.sqrt(gjj)
                if step > delta:
                    delta = step
        if delta < tol:
            break
    return beta


def _standardize(X, w):
    sw = w.sum()
    mean = w @ X / sw
    sd = np.sqrt(w @ (X - mean) ** 2 / sw)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return mean, sd


def _lambda_grid(lam_max: float, n_lambda: int = N_LAMBDA) -> np.ndarray:
    lam_max = max(lam_max, 1e-12)
    return lam_max * np.logspace(0, np.log10(LAMBDA_RATIO), n_lambda)


def _folds(n: int, k: int, seed: int) -> np.ndarray:
    k = max(2, min(k, n))
    return np.random.default_rng(seed).permutation(np.arange(n) % k)


# -- least squares --------------------------------------------------------------


def _ls_path(Z, y, w, lams, tol=1e-7, max_iter=1000):
    """Coefficients (in standardised units) and intercepts along ``lams``."""
    sw = w.sum()
    zm = w @ Z / sw
    ym = w @ y / sw
    Zc = Z - zm
    G = Zc.T @ (w[:, None] * Zc) / sw
    c = Zc.T @ (w * (y - ym)) / sw
    beta = np.zeros(Z.shape[1])
    out_b, out_a = [], []
    for lam in lams:
        beta = _cd(G, c, beta.copy(), float(lam), tol, max_iter)
        out_b.append(beta.copy())
        out_a.append(ym - zm @ beta)
    return np.array(out_b), np.array(out_a)


@dataclass(frozen=True, eq=False)
class LinearModel(LearnerModel, Regressor):
    coef: np.ndarray = None
    intercept: float = 0.0
    penalty: float = 0.0

    def predict(self, X) -> np.ndarray:
        return self._features(X) @ self.coef + self.intercept


def fit_linear(X, y, weights=None, spec: LearnerSpec = LearnerSpec("linear")) -> LinearModel:
    X, y, w = check_xy(X, y, weights, min_rows=2)
    n, p = X.shape
    mean, sd = _standardize(X, w)
    Z = (X - mean) / sd
    penalty = spec.get("penalty")
    if penalty is not None and float(penalty) == 0.0:
        sw = np.sqrt(w)
        A = np.hstack([np.ones((n, 1)), Z]) * sw[:, None]
        sol = np.linalg.lstsq(A, y * sw, rcond=None)[0]
        beta, b0, lam = sol[1:], sol[0], 0.0
    else:
        ym = w @ y / w.sum()
        lam_max = np.max(np.abs((Z - w @ Z / w.sum()).T @ (w * (y - ym)))) / w.sum() if p else 0.0
        if penalty is not None:
            lam = float(penalty)
        else:
            lams = _lambda_grid(lam_max, int(spec.get("n_lambda", N_LAMBDA)))
            fold = _folds(n, int(spec.get("folds", 5)), int(spec.get("seed", 0)))
            err = np.zeros(lams.size)
            for k in np.unique(fold):
                tr, te = fold != k, fold == k
                if w[tr].sum() <= 0 or w[te].sum() <= 0:
                    continue
                B, A0 = _ls_path(Z[tr], y[tr], w[tr], lams)
                pred = Z[te] @ B.T + A0
                err += w[te] @ (y[te, None] - pred) ** 2
            lam = float(lams[np.argmin(err)])
        B, A0 = _ls_path(Z, y, w, [lam])
        beta, b0 = B[0], A0[0]
    coef = beta / sd
    intercept = float(b0 - mean @ coef)
    freeze(coef)
    return LinearModel(kind="linear", n_features=p, coef=coef, intercept=intercept, penalty=lam)


# -- logistic -------------------------------------------------------------------


def _logit_fit(Z, y, w, lam, beta, b0, tol=1e-6, max_outer=50):
    sw = w.sum()
    for _ in range(max_outer):
        eta = b0 + Z @ beta
        p = expit(eta)
        v = np.clip(p * (1 - p), 1e-6, None)
        h = w * v
        z = eta + (y - p) / v
        hs = h.sum()
        zm = h @ Z / hs
        zc = Z - zm
        G = zc.T @ (h[:, None] * zc) / sw
        target_mean = h @ z / hs
        c = zc.T @ (h * (z - target_mean)) / sw
        new = _cd(G, c, beta.copy(), float(lam), 1e-8, 1000)
        new_b0 = target_mean - zm @ new
        change = max(np.max(np.abs(new - beta)) if beta.size else 0.0, abs(new_b0 - b0))
        beta, b0 = new, new_b0
        if change < tol:
            break
    return beta, b0


def _logloss(y, p, w):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return -(w * (y * np.log(p) + (1 - y) * np.log1p(-p))).sum()


@dataclass(frozen=True, eq=False)
class LogisticModel(LearnerModel, Classifier):
    coef: np.ndarray = None
    intercept: float = 0.0
    penalty: float = 0.0

    def decision_function(self, X) -> np.ndarray:
        return self._features(X) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def check_labels(labels) -> np.ndarray:
    lab = np.asarray(labels, dtype=float).ravel()
    if not np.isin(lab, (0.0, 1.0)).all():
        raise LearnerError("labels must be binary 0/1")
    if lab.min() == lab.max():
        raise LearnerError("classifier needs both classes; got a single class")
    return lab


def fit_logistic(X, labels, weights=None, spec: LearnerSpec = LearnerSpec("logistic")) -> LogisticModel:
    X, y, w = check_xy(X, labels, weights, min_rows=2)
    y = check_labels(y)
    n, p = X.shape
    mean, sd = _standardize(X, w)
    Z = (X - mean) / sd
    pbar = np.clip(w @ y / w.sum(), 1e-6, 1 - 1e-6)
    b_start = float(np.log(pbar / (1 - pbar)))
    penalty = spec.get("penalty")
    if penalty is not None:
        lam = float(penalty)
    else:
        lam_max = np.max(np.abs((Z - w @ Z / w.sum()).T @ (w * (y - pbar)))) / w.sum() if p else 0.0
        lams = _lambda_grid(lam_max, int(spec.get("n_lambda", N_LAMBDA)))
        fold = _folds(n, int(spec.get("folds", 5)), int(spec.get("seed", 0)))
        err = np.zeros(lams.size)
        for k in np.unique(fold):
            tr, te = fold != k, fold == k
            if y[tr].min() == y[tr].max():
                continue
            beta, b0 = np.zeros(p), b_start
            for i, lam_i in enumerate(lams):
                beta, b0 = _logit_fit(Z[tr], y[tr], w[tr], lam_i, beta, b0)
                err[i] += _logloss(y[te], expit(b0 + Z[te] @ beta), w[te])
        lam = float(lams[np.argmin(err)])
    beta, b0 = _logit_fit(Z, y, w, lam, np.zeros(p), b_start)
    coef = beta / sd
    intercept = float(b0 - mean @ coef)
    freeze(coef)
    return LogisticModel(kind="logistic", n_features=p, coef=coef, intercept=intercept, penalty=lam)
