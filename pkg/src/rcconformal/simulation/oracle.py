"""Closed-form nuisances of the simulated design.

Given X the outcome is Gaussian, so any score CDF is a difference of two
normal CDFs.  Hidden covariates enter only through ``T = sum(U[:k_u])``,
which is N(0, k_u) independently of V and S; marginalising over U is a
one-dimensional quadrature on a fixed grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr

from ..data import ObservationTable
from ..intervals import bounds
from ..learners import constant
from ..nuisance import FunctionModel, MeanPredictors, clamped
from ..scores import ABS, ConformityScorer
from .dgp import DgpConfig, active_sums, mean_outcome, noise_sd, source_prob, treat_prob

N_NODES = 401
CHUNK = 4000
EPS = 1e-12


def t_grid(k_u: int, n_nodes: int = N_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and normalised weights for T ~ N(0, k_u) on +-8 sd."""
    if k_u == 0:
        return np.zeros(1), np.ones(1)
    sd = math.sqrt(k_u)
    t = np.linspace(-8 * sd, 8 * sd, n_nodes)
    w = np.exp(-0.5 * (t / sd) ** 2)
    return t, w / w.sum()


def interval_prob(lower, upper, empty, mu, sd) -> np.ndarray:
    """P(lower <= Y <= upper) for Y ~ N(mu, sd^2); broadcasts, sd may be 0."""
    sd = np.maximum(sd, EPS)
    lower = np.where(empty, 0.0, lower)
    upper = np.where(empty, 0.0, upper)
    with np.errstate(invalid="ignore"):
        p = ndtr((upper - mu) / sd) - ndtr((lower - mu) / sd)
    return np.where(empty, 0.0, np.clip(np.nan_to_num(p, nan=0.0), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class OracleCdf(FunctionModel):
    """Score CDF at a fixed ``r``; remembers the scorer so the V-marginal can be built from it."""

    scorer: Optional[ConformityScorer] = None
    r: float = 0.0


class Oracle:
    """True nuisance functions of a :class:`DgpConfig`."""

    def __init__(self, config: DgpConfig, n_nodes: int = N_NODES):
        self.cfg = config.calibrated()
        self.t, self.tw = t_grid(self.cfg.k_u, n_nodes)

    # feature layout of X is [V, U]
    def _split(self, X):
        X = np.asarray(X, dtype=float)
        p_v = self.cfg.p_v
        return X[:, :p_v], X[:, p_v:]

    def sums(self, X):
        v, u = self._split(X)
        return active_sums(v, u, self.cfg)

    def g(self, X, a) -> np.ndarray:
        W, T = self.sums(X)
        p = treat_prob(W, T, self.cfg)
        return p if a == 1 else 1 - p

    def g_v(self, V, a) -> np.ndarray:
        """P(A = a | V, S = 1)."""
        W = np.asarray(V)[:, : self.cfg.k_v].sum(1)
        p = treat_prob(W[:, None], self.t[None, :], self.cfg) @ self.tw
        return p if a == 1 else 1 - p

    def kappa(self, V) -> np.ndarray:
        return source_prob(np.asarray(V)[:, : self.cfg.k_v].sum(1), self.cfg)

    def mu(self, X) -> np.ndarray:
        return mean_outcome(*self.sums(X), self.cfg)

    def eta(self, V) -> np.ndarray:
        """E[Y(a) | V] (the same for both levels)."""
        return self.cfg.coef * np.asarray(V)[:, : self.cfg.k_v].sum(1)

    def q(self, scorer: ConformityScorer, X, r: float) -> np.ndarray:
        """P(score <= r | X, A = a, S = 1)."""
        v, _ = self._split(X)
        lo, hi, empty = bounds(scorer, v, r)
        mu = self.mu(X)
        return interval_prob(lo, hi, empty, mu, noise_sd(mu, self.cfg))

    def m(self, scorer: ConformityScorer, V, r: float, a=None) -> np.ndarray:
        """E[q | V, S = 1]; with ``a`` given, the V-only CDF P(score <= r | V, A = a, S = 1)."""
        V = np.asarray(V, dtype=float)
        out = np.empty(V.shape[0])
        for start in range(0, V.shape[0], CHUNK):
            sl = slice(start, start + CHUNK)
            lo, hi, empty = bounds(scorer, V[sl], r)
            W = V[sl, : self.cfg.k_v].sum(1)
            mu = mean_outcome(W[:, None], self.t[None, :], self.cfg)
            p = interval_prob(lo[:, None], hi[:, None], empty[:, None], mu, noise_sd(mu, self.cfg))
            if a is None:
                out[sl] = p @ self.tw
            else:
                ga = treat_prob(W[:, None], self.t[None, :], self.cfg)
                ga = ga if a == 1 else 1 - ga
                out[sl] = (p * ga) @ self.tw / (ga @ self.tw)
        return out

    def abs_scorer(self, a) -> ConformityScorer:
        p_v = self.cfg.p_v
        return ConformityScorer(ABS, a, eta_model=FunctionModel(kind="constant", n_features=p_v, fn=self.eta))

    def abs_quantile(self, alpha: float, n_w: int = 801) -> float:
        """Target (1 - alpha) quantile of ``|Y(a) - E[Y(a) | V]|`` by two-dimensional quadrature."""
        cfg = self.cfg
        sd_w = math.sqrt(cfg.k_v)
        W = np.linspace(-8 * sd_w, 8 * sd_w, n_w)
        ww = np.exp(-0.5 * (W / sd_w) ** 2) * (1 - source_prob(W, cfg))
        ww /= ww.sum()
        mu = mean_outcome(W[:, None], self.t[None, :], cfg)
        sd = noise_sd(mu, cfg)
        resid_mean = mu - cfg.coef * W[:, None]
        joint = ww[:, None] * self.tw[None, :]

        def cdf(r):
            return float((joint * interval_prob(-r, r, False, resid_mean, sd)).sum())

        lo, hi = 0.0, 1.0
        while cdf(hi) < 1 - alpha:
            hi *= 2
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if cdf(mid) < 1 - alpha else (lo, mid)
        return hi

    def target_quantile(self, scorer: ConformityScorer, alpha: float, n_mc: int = 20000, seed: int = 7) -> float:
        """Target (1 - alpha) score quantile for any scorer: weighted V sample, exact inner integral over U."""
        cfg = self.cfg
        V = np.random.default_rng(seed).standard_normal((n_mc, cfg.p_v))
        wv = 1 - self.kappa(V)
        wv /= wv.sum()

        def cdf(r):
            return float(wv @ self.m(scorer, V, r))

        lo, hi = -1.0, 1.0
        while cdf(lo) > 1 - alpha:
            lo *= 2
        while cdf(hi) < 1 - alpha:
            hi *= 2
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if cdf(mid) < 1 - alpha else (lo, mid)
        return hi


def _trim(p, trim):
    lo, hi = trim if trim is not None else (EPS, 1 - EPS)
    return np.clip(p, lo, hi)


class OracleNuisances:
    """Nuisance provider returning the true functions.

    ``features='v'`` gives the true V-only nuisances of the naive comparator.
    ``trim=None`` only guards against exact zeros.
    """

    def __init__(self, config: DgpConfig, trim=None, features: str = "x"):
        self.oracle = Oracle(config)
        self.cfg = self.oracle.cfg
        self.trim = trim
        self.features = features

    @property
    def p_x(self) -> int:
        return self.cfg.p_v + self.cfg.p_u

    def _fm(self, fn, n_features, cls=FunctionModel, **kw):
        return cls(kind="constant", n_features=n_features, fn=fn, **kw)

    def g(self, table, idx, a):
        o, trim = self.oracle, self.trim
        if self.features == "v":
            return self._fm(lambda V: _trim(o.g_v(V, a), trim), self.cfg.p_v)
        return self._fm(lambda X: _trim(o.g(X, a), trim), self.p_x)

    def kappa(self, table, idx):
        o, trim = self.oracle, self.trim
        return self._fm(lambda V: _trim(o.kappa(V), trim), self.cfg.p_v)

    def mean(self, table, idx, a):
        o = self.oracle
        eta = self._fm(o.eta, self.cfg.p_v)
        mu = eta if self.features == "v" else self._fm(o.mu, self.p_x)
        return MeanPredictors(a=a, mu_model=mu, eta_model=eta, features=self.features)

    def q(self, table, idx, a, r_pin, scorer):
        o = self.oracle
        if self.features == "v":
            return self._fm(lambda V: o.m(scorer, V, r_pin, a), self.cfg.p_v, OracleCdf, scorer=scorer, r=r_pin)
        return self._fm(lambda X: o.q(scorer, X, r_pin), self.p_x, OracleCdf, scorer=scorer, r=r_pin)

    def m(self, table, idx, a, r_pin, q_model):
        if self.features == "v":
            return q_model
        o, scorer = self.oracle, q_model.scorer
        return self._fm(lambda V: o.m(scorer, V, r_pin), self.cfg.p_v)


CORRUPTIBLE = ("g", "kappa", "q", "m")


class CorruptedNuisances:
    """Wraps a provider and swaps the named roles for constant models."""

    def __init__(self, base, corrupt: dict):
        bad = set(corrupt) - set(CORRUPTIBLE)
        if bad:
            raise ValueError(f"cannot corrupt {sorted(bad)}")
        self.base = base
        self.corrupt = dict(corrupt)
        self.features = getattr(base, "features", "x")
        self.spec = getattr(base, "spec", None)

    def _dims(self, table, role):
        if role in ("kappa", "m") or self.features == "v":
            return table.p_v
        return table.p_v + table.p_u

    def _const(self, table, role, classifier=True):
        return clamped(constant(self.corrupt[role], self._dims(table, role), classifier))

    def g(self, table, idx, a):
        return self._const(table, "g") if "g" in self.corrupt else self.base.g(table, idx, a)

    def kappa(self, table, idx):
        return self._const(table, "kappa") if "kappa" in self.corrupt else self.base.kappa(table, idx)

    def mean(self, table, idx, a):
        return self.base.mean(table, idx, a)

    def q(self, table, idx, a, r_pin, scorer):
        if "q" in self.corrupt:
            model = self._const(table, "q")
            return OracleCdf(kind="constant", n_features=model.n_features, fn=model.predict, scorer=scorer, r=r_pin)
        return self.base.q(table, idx, a, r_pin, scorer)

    def m(self, table, idx, a, r_pin, q_model):
        if "m" in self.corrupt:
            return self._const(table, "m", classifier=False)
        return self.base.m(table, idx, a, r_pin, q_model)
