import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcconformal.data import ObservationTable, Row, make_splits
from rcconformal.learners import constant
from rcconformal.nuisance import LearnedNuisances, NuisanceBundle, NuisanceSpec, function_model, trimmed
from rcconformal.quantile_estimators import (
    REL_TOL,
    EicTermBreakdown,
    QuantileEstimate,
    default_grid,
    dml_rhat,
    eic_terms,
    eic_value,
    localized_solve,
    naive_dml_rhat,
    plugin_rhat,
    solve_step,
    weighted_rhat,
)
from rcconformal.scores import ConformityScorer

from conftest import toy_table


def slack(w, threshold):
    return REL_TOL * max(w.sum(), abs(threshold), 1.0)


def brute_step(scores, w, threshold):
    # scan every candidate in ascending order
    if threshold < -slack(w, threshold):
        return -math.inf
    for r in sorted(set(scores[w > 0])):
        if w[scores <= r].sum() >= threshold - slack(w, threshold):
            return r
    return math.inf


def prob(p, n_features):
    return trimmed(constant(p, n_features, classifier=True), (1e-9, 1 - 1e-9))


def const_bundle(p_x, p_v, q=0.5, m=0.5, g=0.5, kappa=0.5):
    return NuisanceBundle(a=1, r_pin=0.0, q_model=constant(q, p_x), m_model=constant(m, p_v),
                          g_model=prob(g, p_x), kappa_model=prob(kappa, p_v))


def cqr(lo, hi, p_v=1):
    return ConformityScorer("cqr", 1, lo_model=function_model(lambda V: np.full(len(V), lo), p_v),
                            hi_model=function_model(lambda V: np.full(len(V), hi), p_v), alpha=0.1)


# -- weighted -------------------------------------------------------------------------


def test_weighted_examples():
    assert weighted_rhat(np.arange(1, 11.0), np.ones(10), 0.1).value == 9.0
    assert weighted_rhat([3.3], [1.0], 0.5).value == 3.3
    w = np.full(10, 1e-8)
    w[-1] = 1.0
    assert weighted_rhat(np.arange(10.0), w, 0.05).value == 9.0


def test_weighted_self_normalises():
    s = np.random.default_rng(0).normal(size=50)
    w = np.random.default_rng(1).exponential(size=50)
    assert weighted_rhat(s, w, 0.2).value == weighted_rhat(s, 7.5 * w, 0.2).value


@given(data=st.lists(st.tuples(st.integers(-20, 20), st.floats(0, 5)), min_size=1, max_size=25),
       frac=st.floats(-0.2, 1.2))
def test_solve_step_matches_scan(data, frac):
    scores = np.array([d[0] for d in data], dtype=float)
    w = np.array([d[1] for d in data])
    threshold = frac * w.sum()
    value, status = solve_step(scores, w, threshold)
    expect = brute_step(scores, w, threshold)
    tol = slack(w, threshold)
    if threshold > w.sum() + tol or not (w > 0).any():
        assert value == math.inf and status == "above"
    elif threshold < -tol:
        assert value == -math.inf and status == "below"
    else:
        assert value == expect
        # exact infimum: the sum reaches the threshold at value but not just below it
        assert w[scores <= value].sum() >= threshold - tol
        assert w[scores < value].sum() < threshold - tol or threshold <= tol


@given(data=st.lists(st.tuples(st.floats(-50, 50), st.floats(0.01, 5)), min_size=1, max_size=25),
       alpha=st.floats(0.01, 0.99), c=st.floats(-100, 100))
def test_weighted_shift_equivariance(data, alpha, c):
    scores = np.array([d[0] for d in data])
    w = np.array([d[1] for d in data])
    base = weighted_rhat(scores, w, alpha).value
    shifted = weighted_rhat(scores + c, w, alpha).value
    assert shifted == pytest.approx(base + c, abs=1e-9)


def test_estimate_validation():
    with pytest.raises(ValueError):
        QuantileEstimate(1.0, "bootstrap", 0.1)
    with pytest.raises(ValueError):
        QuantileEstimate(1.0, "dml", 1.5)
    with pytest.raises(ValueError):
        weighted_rhat([1.0, 2.0], [0.0, 0.0], 0.1)


# -- influence curve ------------------------------------------------------------------------


def test_eic_value_examples():
    p_v = 1
    b = const_bundle(2, p_v, q=0.7, m=0.4, g=0.5, kappa=0.8)
    sc = cqr(-1.0, 1.0)
    tgt = Row(id=0, y=None, a=None, v=np.zeros(1), u=None, s=0)
    assert eic_value(tgt, 0.0, b, sc, 0.1) == pytest.approx(0.4 - 0.9)
    other = Row(id=1, y=0.0, a=0, v=np.zeros(1), u=np.zeros(1), s=1)
    assert eic_value(other, 0.0, b, sc, 0.1) == pytest.approx(0.25 * (0.7 - 0.4))
    treated = Row(id=2, y=0.0, a=1, v=np.zeros(1), u=np.zeros(1), s=1)
    w = 0.2 / (0.5 * 0.8)
    assert eic_value(treated, 0.0, b, sc, 0.1) == pytest.approx(0.25 * 0.3 + w * (1 - 0.7))
    assert eic_value(treated, -2.0, b, sc, 0.1) == pytest.approx(0.25 * 0.3 + w * (0 - 0.7))


def test_eic_terms_match_rowwise(table):
    p_x = table.p_v + table.p_u
    b = const_bundle(p_x, table.p_v, q=0.6, m=0.55, g=0.4, kappa=0.7)
    sc = cqr(-1.0, 1.0, table.p_v)
    ev = b.evaluate(table)
    r = 0.3
    ind = np.zeros(table.n, bool)
    hit = table.treated(1)
    ind[hit] = sc.score(table.y.data[hit], table.v[hit]) <= r
    terms = eic_terms(0.1, ev["s"], ev["q"], ev["m"], ev["ratio"], ev["w"], ind)
    assert isinstance(terms, EicTermBreakdown)
    rowwise = [eic_value(row, r, b, sc, 0.1) for row in table.rows()]
    assert terms.total == pytest.approx(sum(rowwise))
    assert np.allclose(terms.per_row.sum(1), rowwise)


# -- localized solve --------------------------------------------------------------------------


def balanced_table(n1=100, seed=0):
    """Treated source n1, untreated source n1, target 2*n1: with g = kappa = 0.5 the corrections cancel."""
    rng = np.random.default_rng(seed)
    n = 4 * n1
    s = np.r_[np.ones(2 * n1, int), np.zeros(2 * n1, int)]
    a = np.r_[np.ones(n1, int), np.zeros(n1, int), np.zeros(2 * n1, int)]
    v = rng.normal(size=(n, 1))
    y = v[:, 0] + rng.normal(size=n)
    return ObservationTable.from_full(v, s, y, a, rng.normal(size=(n, 1)))


@pytest.mark.parametrize("q0", [0.3, 0.9, 0.97])
def test_dml_equals_unweighted_without_shift_or_confounding(q0):
    t = balanced_table()
    sc = ConformityScorer("abs", 1, eta_model=function_model(lambda V: V[:, 0], 1))
    b = const_bundle(2, 1, q=q0, m=q0, g=0.5, kappa=0.5)
    est = localized_solve(t, np.arange(t.n), b, sc, 0.1)
    scores = np.sort(sc.score(t.y.data[:100], t.v[:100]))
    assert est.value == scores[89]  # the 90th order statistic, ceil(0.9 * 100)
    assert est.status == "ok"


def test_dml_shift_equivariance():
    t = balanced_table(seed=3)
    b = const_bundle(2, 1, q=0.8, m=0.7, g=0.5, kappa=0.6)
    base = localized_solve(t, np.arange(t.n), b, cqr(-5.0, 5.0), 0.1).value
    # shrinking the band by c on each side adds c to every score
    for c in (0.5, 1.25, 3.0):
        shifted = localized_solve(t, np.arange(t.n), b, cqr(-5.0 + c, 5.0 - c), 0.1).value
        assert shifted == pytest.approx(base + c, abs=1e-12)


def test_dml_sentinels():
    t = balanced_table(n1=5)
    sc = cqr(-1.0, 1.0)
    hi = localized_solve(t, np.arange(t.n), const_bundle(2, 1, q=0.0, m=0.0, g=0.9, kappa=0.9), sc, 0.1)
    assert hi.value == math.inf and hi.status == "above"
    lo = localized_solve(t, np.arange(t.n), const_bundle(2, 1, q=1.0, m=1.0, g=0.9, kappa=0.9), sc, 0.1)
    assert lo.value == -math.inf and lo.status == "below"


def test_dml_monotone_solvability():
    t = balanced_table(seed=5)
    sc = cqr(-1.0, 1.0)
    b = const_bundle(2, 1, q=0.75, m=0.8, g=0.45, kappa=0.55)
    est = localized_solve(t, np.arange(t.n), b, sc, 0.1)
    ev = b.evaluate(t)
    treated = t.treated(1)
    scores = np.where(treated, sc.score(t.y.filled(0), t.v), np.inf)

    def lhs(r):
        return eic_terms(0.1, ev["s"], ev["q"], ev["m"], ev["ratio"], ev["w"], scores <= r).total

    grid = np.sort(scores[treated])
    vals = np.array([lhs(r) for r in grid])
    assert np.all(np.diff(vals) >= 0)
    k = int(np.argmax(vals >= -1e-9))
    assert est.value == grid[k]
    assert est.diagnostics["eic_sum"] >= -1e-9


def test_dml_and_naive_end_to_end():
    t = toy_table(1500, seed=8)
    sp = make_splits(t, (0.5, 0.5), seed=1)
    spec = NuisanceSpec.fast()
    prov = LearnedNuisances(spec, "x")
    sc = ConformityScorer("abs", 1, eta_model=function_model(lambda V: V.sum(1), t.p_v))
    g, k = prov.g(t, sp.train, 1), prov.kappa(t, sp.train)
    est = dml_rhat(t, sp, 1, 0.1, sc, prov, g, k)
    assert est.method == "dml" and est.finite
    assert set(est.diagnostics) >= {"r_init", "offset", "total_weight", "ess", "eic_sum"}
    naive = LearnedNuisances(spec, "v")
    gv = naive.g(t, sp.train, 1)
    est_v = naive_dml_rhat(t, sp, 1, 0.1, sc, naive, gv, k)
    assert est_v.method == "naive-dml"
    with pytest.raises(ValueError):
        naive_dml_rhat(t, sp, 1, 0.1, sc, prov, g, k)


def test_naive_target_row_contribution():
    b = NuisanceBundle(a=1, r_pin=0.0, q_model=function_model(lambda V: np.full(len(V), 0.85), 1),
                       m_model=function_model(lambda V: np.full(len(V), 0.85), 1), g_model=prob(0.5, 1),
                       kappa_model=prob(0.5, 1), features="v")
    row = Row(id=0, y=None, a=None, v=np.zeros(1), u=None, s=0)
    assert eic_value(row, 0.0, b, cqr(-1, 1), 0.1) == pytest.approx(0.85 - 0.9)


# -- plug-in ---------------------------------------------------------------------------------


class LinearCdfProvider:
    """m(r, V) = clip(r / 10) for every V; lets the plug-in root be computed by hand."""

    features = "x"

    def q(self, table, idx, a, r, scorer):
        return constant(float(np.clip(r / 10, 0, 1)), table.p_v + table.p_u)

    def m(self, table, idx, a, r, q_model):
        return constant(float(q_model.predict(np.zeros((1, q_model.n_features)))[0]), table.p_v)


def test_plugin_examples(table):
    sc = cqr(-1.0, 1.0, table.p_v)
    prov = LinearCdfProvider()
    idx = np.arange(table.n)
    one = plugin_rhat(table, idx, idx, 1, 0.1, sc, prov, r_grid=[9.0])
    assert one.value == 9.0
    grid = plugin_rhat(table, idx, idx, 1, 0.1, sc, prov, r_grid=np.arange(0, 12.0))
    assert grid.value == 9.0 and grid.diagnostics["monotone"]
    top = plugin_rhat(table, idx, idx, 1, 0.1, sc, prov, r_grid=[20.0, 40.0])
    assert top.value == 20.0
    none = plugin_rhat(table, idx, idx, 1, 0.1, sc, prov, r_grid=[1.0, 2.0])
    assert none.value == math.inf and none.status == "no-bracket"
    refined = plugin_rhat(table, idx, idx, 1, 0.25, sc, prov, r_grid=[0.0, 5.0, 10.0], n_grid=10, refine=2)
    assert refined.value == pytest.approx(7.5)


def test_plugin_needs_target(table):
    src = np.flatnonzero(table.s == 1)
    with pytest.raises(Exception):
        plugin_rhat(table, src, src, 1, 0.1, cqr(-1, 1, table.p_v), LinearCdfProvider(), r_grid=[1.0])


@given(scores=st.lists(st.floats(-100, 100), min_size=2, max_size=200), n=st.integers(3, 80))
def test_default_grid_spans_scores(scores, n):
    s = np.array(scores)
    g = default_grid(s, n)
    assert np.all(np.diff(g) > 0)
    assert g[0] == s.min() and g[-1] == pytest.approx(s.max())
    assert g.size <= n + 1
