"""Synthetic source/target data with hidden confounders and both counterfactuals retained."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

from ..data import ObservationTable, Row


@dataclass(frozen=True)
class DgpConfig:
    """Design of one simulated population.

    ``noise='sd'`` draws the outcome noise with standard deviation
    ``sqrt(|mu|)``; ``noise='variance'`` uses ``sqrt(|mu|)`` as the variance.
    ``intercept_b=None`` means calibrate it to ``target_source_rate``.
    """

    p_v: int = 15
    p_u: int = 15
    k_v: int = 5
    k_u: int = 10
    n: int = 5000
    target_source_rate: float = 0.9
    intercept_b: Optional[float] = None
    seed: int = 0
    noise: str = "sd"

    def __post_init__(self):
        if not (1 <= self.k_v <= self.p_v and 0 <= self.k_u <= self.p_u):
            raise ValueError("need 1 <= k_v <= p_v and 0 <= k_u <= p_u")
        if not 0 < self.target_source_rate < 1:
            raise ValueError("target_source_rate must lie in (0, 1)")
        if self.noise not in ("sd", "variance"):
            raise ValueError("noise must be 'sd' or 'variance'")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def coef(self) -> float:
        return self.k_v / (self.k_v + self.k_u)

    @property
    def b(self) -> float:
        if self.intercept_b is not None:
            return float(self.intercept_b)
        return calibrate_intercept(self)

    def calibrated(self) -> "DgpConfig":
        return replace(self, intercept_b=self.b)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@lru_cache(maxsize=64)
def _calibrate(rate: float, k_v: int, n_draws: int, seed: int, tol: float) -> float:
    w = np.random.default_rng(seed).standard_normal((n_draws, k_v)).sum(1) / np.sqrt(k_v)
    lo, hi = -30.0, 30.0
    while True:
        mid = 0.5 * (lo + hi)
        gap = expit(mid - w).mean() - rate
        if abs(gap) <= tol or hi - lo < 1e-12:
            return mid
        lo, hi = (mid, hi) if gap < 0 else (lo, mid)


def calibrate_intercept(config: DgpConfig, n_draws: int = 1_000_000, seed: int = 20240101, tol: float = 1e-4) -> float:
    """Intercept ``b`` with ``mean(expit(b - sum(V[:k_v]) / sqrt(k_v))) = target_source_rate``.

    Bisection on a fixed-seed sample of ``n_draws`` covariate vectors.
    """
    return _calibrate(float(config.target_source_rate), int(config.k_v), int(n_draws), int(seed), float(tol))


# -- structural functions ---------------------------------------------------------


def active_sums(v: np.ndarray, u: np.ndarray, cfg: DgpConfig) -> tuple[np.ndarray, np.ndarray]:
    return v[:, : cfg.k_v].sum(1), u[:, : cfg.k_u].sum(1)


def mean_outcome(w_sum, t_sum, cfg: DgpConfig):
    return cfg.coef * (np.asarray(w_sum) + 2 * np.asarray(t_sum))


def noise_sd(mu, cfg: DgpConfig):
    mu = np.abs(np.asarray(mu, dtype=float))
    return np.sqrt(mu) if cfg.noise == "sd" else mu ** 0.25


def treat_prob(w_sum, t_sum, cfg: DgpConfig):
    """P(A = 1 | V, U)."""
    return expit((np.asarray(w_sum) - 2 * np.asarray(t_sum)) / np.sqrt(cfg.k_v + cfg.k_u))


def source_prob(w_sum, cfg: DgpConfig, b: Optional[float] = None):
    """P(S = 1 | V)."""
    b = cfg.b if b is None else b
    return expit(b - np.asarray(w_sum) / np.sqrt(cfg.k_v))


# -- samples ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulatedUnit:
    v: np.ndarray
    u: np.ndarray
    y0: float
    y1: float
    a: int
    s: int

    @property
    def y(self) -> float:
        return self.y1 if self.a == 1 else self.y0

    def observed(self, i: int = 0) -> Row:
        src = self.s == 1
        return Row(id=i, y=self.y if src else None, a=self.a if src else None, v=self.v,
                   u=self.u if src else None, s=self.s)


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    """Full draw. Estimators only ever see :attr:`table`; the rest is kept for evaluation."""

    config: DgpConfig
    v: np.ndarray
    u: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    a: np.ndarray
    s: np.ndarray
    table: ObservationTable = field(repr=False)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def counterfactual(self, a: int) -> np.ndarray:
        return self.y1 if a == 1 else self.y0

    def units(self) -> Iterator[SimulatedUnit]:
        for i in range(self.n):
            yield SimulatedUnit(self.v[i], self.u[i], float(self.y0[i]), float(self.y1[i]), int(self.a[i]), int(self.s[i]))


def generate(config: DgpConfig, rng: Optional[np.random.Generator] = None) -> SimulatedSample:
    cfg = config.calibrated()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.n
    v = rng.standard_normal((n, cfg.p_v))
    u = rng.standard_normal((n, cfg.p_u))
    W, T = active_sums(v, u, cfg)
    mu = mean_outcome(W, T, cfg)
    sd = noise_sd(mu, cfg)
    y0 = mu + sd * rng.standard_normal(n)
    y1 = mu + sd * rng.standard_normal(n)
    a = (rng.random(n) < treat_prob(W, T, cfg)).astype(int)
    s = (rng.random(n) < source_prob(W, cfg)).astype(int)
    y = np.where(a == 1, y1, y0)
    table = ObservationTable.from_full(v, s, y, a, u)
    return SimulatedSample(cfg, v, u, y0, y1, a, s, table)
