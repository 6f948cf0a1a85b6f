"""Estimators of the target-population (1 - alpha) quantile of conformity scores.

``weighted``   self-normalised weighted empirical quantile of calibration scores.
``plugin``     smallest grid value where the target average of the marginalised
               score CDF reaches 1 - alpha.
``dml``        root of the calibration-fold influence-curve equation, with the
               score CDFs localised at an initial weighted estimate.
``naive-dml``  the same solve with every nuisance restricted to V.

All roots are infima over order statistics of step functions; no
interpolation is done anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ObservationTable, Row, SplitAssignment
from .nuisance import NuisanceBundle, NuisanceError, fit_bundle, weights
from .scores import ConformityScorer, score_batch

METHODS = ("weighted", "plugin", "dml", "naive-dml")
REL_TOL = 1e-12


@dataclass(frozen=True)
class QuantileEstimate:
    value: float
    method: str
    alpha: float
    a: object = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def status(self) -> str:
        return self.diagnostics.get("status", "ok")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True, eq=False)
class EicTermBreakdown:
    """Sums of the three influence-curve terms; ``per_row`` keeps each row's parts."""

    term_target: float
    term_shift: float
    term_treat: float
    per_row: np.ndarray = None

    @property
    def total(self) -> float:
        return self.term_target + self.term_shift + self.term_treat


def _ess(w: np.ndarray) -> float:
    w = w[w > 0]
    return float(w.sum() ** 2 / (w ** 2).sum()) if w.size else 0.0


def _positive(scores, w):
    scores = np.asarray(scores, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if scores.shape != w.shape:
        raise ValueError("scores and weights differ in length")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be finite and nonnegative")
    keep = w > 0
    return scores[keep], w[keep]


def solve_step(scores, w, threshold: float) -> tuple[float, str]:
    """Smallest score ``r`` with ``sum(w * (scores <= r)) >= threshold``.

    Returns ``(-inf, "below")`` when ``threshold < 0`` and ``(+inf, "above")``
    when it exceeds the total weight.
    """
    r, w = _positive(scores, w)
    total = w.sum()
    slack = REL_TOL * max(total, abs(threshold), 1.0)
    if threshold < -slack:
        return -math.inf, "below"
    if threshold > total + slack or r.size == 0:
        return math.inf, "above"
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, threshold - slack, side="left"))
    return float(r[order][min(k, r.size - 1)]), "ok"


def weighted_rhat(scores, w, alpha: float, a=None) -> QuantileEstimate:
    """inf{r : sum w 1(R <= r) / sum w >= 1 - alpha} over the scores with positive weight."""
    r, ww = _positive(scores, w)
    if ww.size == 0:
        raise ValueError("all weights are zero")
    total = ww.sum()
    value, status = solve_step(r, ww, (1 - alpha) * total)
    return QuantileEstimate(value, "weighted", alpha, a, {"status": status, "ess": _ess(ww), "n": int(ww.size)})


# -- influence curve ----------------------------------------------------------------


def eic_terms(alpha: float, s, q, m, ratio, w, indicator) -> EicTermBreakdown:
    """Vectorised influence curve: ``(1-S)(m-(1-a)) + S(1-k)/k (q-m) + w (1(R<=r) - q)``."""
    s = np.asarray(s, dtype=float)
    t_target = (1 - s) * (np.asarray(m) - (1 - alpha))
    t_shift = np.asarray(ratio) * (np.asarray(q) - np.asarray(m))
    t_treat = np.asarray(w) * (np.asarray(indicator, dtype=float) - np.asarray(q))
    parts = np.column_stack([t_target, t_shift, t_treat])
    return EicTermBreakdown(float(t_target.sum()), float(t_shift.sum()), float(t_treat.sum()), parts)


def eic_value(row: Row, r: float, bundle: NuisanceBundle, scorer: ConformityScorer, alpha: float) -> float:
    """Influence curve of one row at candidate ``r`` with nuisances pinned at ``bundle.r_pin``."""
    v = row.v[None, :]
    m = float(np.clip(bundle.m_model.predict(v)[0], 0, 1))
    if row.s == 0:
        return m - (1 - alpha)
    k = float(bundle.kappa_model.predict_proba(v)[0])
    if k <= 0:
        raise NuisanceError("source probability of 0; probabilities must be trimmed")
    feats = row.v if bundle.features == "v" else row.x
    q = float(np.clip(bundle.q_model.predict(feats[None, :])[0], 0, 1))
    out = (1 - k) / k * (q - m)
    if row.a == bundle.a:
        g = float(bundle.g_model.predict_proba(feats[None, :])[0])
        if g <= 0:
            raise NuisanceError("propensity of 0; probabilities must be trimmed")
        w = (1 - k) / (g * k)
        out += w * (float(scorer.score(row.y, v)[0] <= r) - q)
    return out


def _treated_scores(table, rows, a, scorer):
    hit = table.treated(a)[rows]
    out = np.zeros(rows.size)
    if hit.any():
        out[hit] = score_batch(scorer, table, rows[hit])
    return out, hit


def localized_solve(table: ObservationTable, cal, bundle: NuisanceBundle, scorer: ConformityScorer,
                    alpha: float, method: str = "dml", extra: Optional[dict] = None) -> QuantileEstimate:
    """Solve the calibration-fold estimating equation for ``r`` with nuisances fixed in ``bundle``.

    Only ``sum w 1(R <= r)`` moves with ``r``, so the root is the smallest
    calibration score where that sum reaches ``-c``, ``c`` being the sum of
    every other term.
    """
    cal = np.asarray(cal, dtype=int)
    ev = bundle.evaluate(table, cal)
    scores, hit = _treated_scores(table, cal, bundle.a, scorer)
    if not hit.any():
        raise NuisanceError(f"no calibration source rows with treatment {bundle.a!r}")
    s, q, m, ratio, w = ev["s"], ev["q"], ev["m"], ev["ratio"], ev["w"]
    c = float(((1 - s) * (m - (1 - alpha)) + ratio * (q - m) - w * q).sum())
    value, status = solve_step(scores, w, -c)
    ind = scores <= value
    terms = eic_terms(alpha, s, q, m, ratio, w, ind & hit)
    diag = {
        "status": status, "r_init": bundle.r_pin, "offset": c, "total_weight": float(w.sum()),
        "ess": _ess(w), "n": int(hit.sum()), "eic_sum": terms.total,
        "term_target": terms.term_target, "term_shift": terms.term_shift, "term_treat": terms.term_treat,
    }
    diag.update(extra or {})
    return QuantileEstimate(value, method, alpha, bundle.a, diag)


def r_init(table: ObservationTable, train1, a, alpha, scorer, g_model, kappa_model, features="x") -> QuantileEstimate:
    rows = np.asarray(train1, dtype=int)
    w = weights(table, rows, a, g_model, kappa_model, features)
    scores, hit = _treated_scores(table, rows, a, scorer)
    if not hit.any():
        raise NuisanceError(f"no train1 source rows with treatment {a!r}")
    return weighted_rhat(scores[hit], w[hit], alpha, a)


def dml_rhat(table: ObservationTable, splits: SplitAssignment, a, alpha: float, scorer: ConformityScorer,
             provider, g_model, kappa_model) -> QuantileEstimate:
    """Localised DML: initial estimate on train1, score CDFs at it on train2, solve on cal."""
    features = getattr(provider, "features", "x")
    init = r_init(table, splits.train1, a, alpha, scorer, g_model, kappa_model, features)
    bundle = fit_bundle(provider, table, splits.train2, a, init.value, scorer, g_model, kappa_model)
    method = "naive-dml" if features == "v" else "dml"
    return localized_solve(table, splits.cal, bundle, scorer, alpha, method)


def naive_dml_rhat(table: ObservationTable, splits: SplitAssignment, a, alpha: float, scorer: ConformityScorer,
                   provider, g_model, kappa_model) -> QuantileEstimate:
    """Comparator ignoring the hidden confounders; ``provider`` and ``g_model`` must work on V."""
    if getattr(provider, "features", "x") != "v":
        raise ValueError("naive DML needs a V-only nuisance provider")
    return dml_rhat(table, splits, a, alpha, scorer, provider, g_model, kappa_model)


def weighted_cal_rhat(table: ObservationTable, cal, a, alpha, scorer, g_model, kappa_model) -> QuantileEstimate:
    """Weighted conformal estimate from the calibration fold."""
    return r_init(table, cal, a, alpha, scorer, g_model, kappa_model)


# -- plug-in ------------------------------------------------------------------------


def default_grid(scores: np.ndarray, n_grid: int = 50) -> np.ndarray:
    """Evenly spaced up to the median, log-spaced offsets above it, spanning the score range."""
    lo, med, hi = float(np.min(scores)), float(np.median(scores)), float(np.max(scores))
    n_low = n_grid // 2
    low = np.linspace(lo, med, n_low, endpoint=False) if med > lo else np.array([lo])
    high = med + (hi - med) * np.logspace(-2, 0, n_grid - low.size) if hi > med else np.array([hi])
    return np.unique(np.concatenate([low, [med], high]))


def plugin_rhat(table: ObservationTable, fit_idx, target_idx, a, alpha: float, scorer: ConformityScorer,
                provider, r_grid=None, n_grid: int = 50, refine: int = 0) -> QuantileEstimate:
    """Smallest grid ``r`` with the target-row average of the fitted ``m(r, V)`` at least ``1 - alpha``.

    ``refine`` re-grids the bracketing interval that many times with
    ``n_grid`` evenly spaced points each.
    """
    fit_idx = np.asarray(fit_idx, dtype=int)
    tgt = np.asarray(target_idx, dtype=int)
    tgt = tgt[table.s[tgt] == 0]
    if tgt.size == 0:
        raise NuisanceError("plug-in estimate needs target rows")
    treated = fit_idx[table.treated(a)[fit_idx]]
    if r_grid is None:
        r_grid = default_grid(score_batch(scorer, table, treated), n_grid)
    Vt = table.features(tgt, "v")

    def curve(grid):
        vals = []
        for r in grid:
            q = provider.q(table, fit_idx, a, float(r), scorer)
            m = provider.m(table, fit_idx, a, float(r), q)
            vals.append(float(np.clip(m.predict(Vt), 0, 1).mean()))
        return np.array(vals)

    grid = np.sort(np.asarray(r_grid, dtype=float))
    vals = curve(grid)
    monotone = bool(np.all(np.diff(vals) >= -1e-12))
    for _ in range(refine):
        k = int(np.argmax(vals >= 1 - alpha)) if (vals >= 1 - alpha).any() else -1
        if k <= 0:
            break
        grid = np.linspace(grid[k - 1], grid[k], n_grid + 1)[1:]
        vals = curve(grid)
    ok = vals >= 1 - alpha
    if not ok.any():
        return QuantileEstimate(math.inf, "plugin", alpha, a,
                                {"status": "no-bracket", "monotone": monotone, "grid_max": float(grid[-1])})
    k = int(np.argmax(ok))
    return QuantileEstimate(float(grid[k]), "plugin", alpha, a,
                            {"status": "ok", "monotone": monotone, "curve_at_root": float(vals[k]),
                             "grid_size": int(grid.size)})
