import numpy as np
import pytest
from scipy.special import expit

from rcconformal.data import ObservationTable, Row
from rcconformal.learners import LearnerSpec, constant
from rcconformal.nuisance import (
    TRIM,
    NuisanceError,
    NuisanceSpec,
    compute_weight,
    fit_g,
    fit_kappa,
    fit_m,
    fit_q,
    fit_two_stage_mean,
    function_model,
    shift_ratio,
    trimmed,
    weights,
)
from rcconformal.scores import ConformityScorer
from rcconformal.simulation import DgpConfig, Oracle, generate

from conftest import toy_table


@pytest.fixture(scope="module")
def sim20k():
    return generate(DgpConfig(n=20_000, seed=11))


def half(n_features):
    return trimmed(constant(0.5, n_features, classifier=True))


def test_g_no_signal():
    # CV occasionally keeps a small noise coefficient, so judge the bound across draws
    dev = []
    for seed in range(30):
        t = toy_table(5000, seed=seed)
        g = fit_g(t, 1, LearnerSpec("logistic"))
        X = t.features(np.flatnonzero(t.s == 1), "x")
        dev.append(np.abs(g.predict_proba(X) - 0.5).max())
    dev = np.array(dev)
    assert np.median(dev) <= 0.05 and np.mean(dev <= 0.05) >= 0.8


def test_g_recovers_propensity(sim20k):
    t = sim20k.table
    g = fit_g(t, 1, LearnerSpec("logistic"))
    src = np.flatnonzero(t.s == 1)
    X = t.features(src, "x")
    assert np.abs(g.predict_proba(X) - Oracle(sim20k.config).g(X, 1)).mean() <= 0.05


def test_g_trims():
    m = trimmed(constant(0.99, 1, classifier=True))
    assert m.predict_proba(np.zeros((1, 1)))[0] == pytest.approx(0.975)
    assert trimmed(constant(0.001, 1, classifier=True)).predict_proba(np.zeros((1, 1)))[0] == pytest.approx(0.025)


def test_g_single_treatment_error():
    t = toy_table(50)
    t1 = ObservationTable.from_full(t.v, t.s, np.zeros(t.n), np.ones(t.n, int), np.zeros((t.n, 1)))
    with pytest.raises(NuisanceError):
        fit_g(t1, 1)


def test_kappa_constant_rate():
    t = toy_table(20_000, seed=4, source_rate=0.9)
    k = fit_kappa(t)
    assert np.abs(k.predict_proba(t.v) - 0.9).max() <= 0.02


def test_kappa_recovers_truth(sim20k):
    t = sim20k.table
    k = fit_kappa(t)
    assert np.abs(k.predict_proba(t.v) - Oracle(sim20k.config).kappa(t.v)).mean() <= 0.05
    p = k.predict_proba(t.v)
    assert p.min() >= TRIM[0] and p.max() <= TRIM[1]


def test_kappa_single_population_error():
    t = toy_table(50, source_rate=1.0)
    with pytest.raises(NuisanceError):
        fit_kappa(t)


def test_weight_examples():
    g, k = half(2), half(1)
    row = Row(id=0, y=1.0, a=1, v=np.zeros(1), u=np.zeros(1), s=1)
    assert compute_weight(row, 1, g, k) == pytest.approx(2.0)
    assert compute_weight(row, 0, g, k) == 0.0
    target = Row(id=1, y=None, a=None, v=np.zeros(1), u=None, s=0)
    assert compute_weight(target, 1, g, k) == 0.0


def test_weight_zero_denominator():
    zero = constant(0.0, 2, classifier=True)
    row = Row(id=0, y=1.0, a=1, v=np.zeros(1), u=np.zeros(1), s=1)
    with pytest.raises(NuisanceError):
        compute_weight(row, 1, zero, half(1))


def test_vectorised_weights_match_rowwise(table):
    g = fit_g(table, 1)
    k = fit_kappa(table)
    w = weights(table, None, 1, g, k)
    assert np.allclose(w, [compute_weight(r, 1, g, k) for r in table.rows()])
    bound = (1 - TRIM[0]) / TRIM[0] ** 2
    assert np.isfinite(w).all() and (w >= 0).all() and w.max() <= bound
    ratio = shift_ratio(table, None, k)
    assert (ratio[table.s == 0] == 0).all()


def test_two_stage_mean_without_u():
    rng = np.random.default_rng(5)
    n = 4000
    v = rng.normal(size=(n, 2))
    u = rng.normal(size=(n, 1))
    y = 1 + 2 * v[:, 0] - v[:, 1] + 0.1 * rng.normal(size=n)
    t = ObservationTable.from_full(v, (rng.random(n) < 0.8).astype(int), y, rng.integers(0, 2, n), u)
    mp = fit_two_stage_mean(t, 1, NuisanceSpec.fast())
    grid = rng.normal(size=(200, 2))
    assert np.abs(mp.predict(grid) - (1 + 2 * grid[:, 0] - grid[:, 1])).max() < 0.05


def test_two_stage_mean_dgp(sim20k):
    t = sim20k.table
    mp = fit_two_stage_mean(t, 1, NuisanceSpec.fast())
    tgt = np.flatnonzero(t.s == 0)
    assert np.abs(mp.predict(t.v[tgt]) - Oracle(sim20k.config).eta(t.v[tgt])).mean() <= 0.1


def test_two_stage_mean_uses_source_rows_only(table):
    # stage 2 must not change when target covariates move
    mp = fit_two_stage_mean(table, 1, NuisanceSpec.fast())
    v = table.v.copy()
    v[table.s == 0] += 100.0
    moved = ObservationTable(v=v, s=table.s, y=table.y, a=table.a, u=table.u, ids=table.ids)
    mp2 = fit_two_stage_mean(moved, 1, NuisanceSpec.fast())
    grid = np.random.default_rng(0).normal(size=(20, 2))
    assert np.allclose(mp.predict(grid), mp2.predict(grid))


def test_two_stage_mean_empty():
    t = toy_table(30)
    t0 = ObservationTable.from_full(t.v, t.s, np.zeros(t.n), np.zeros(t.n, int), t.u.filled(0))
    with pytest.raises(NuisanceError):
        fit_two_stage_mean(t0, 1)


def _abs_scorer(p_v, a=1):
    return ConformityScorer("abs", a, eta_model=function_model(lambda V: np.zeros(len(V)), p_v))


def test_q_constant_fallbacks(table):
    sc = _abs_scorer(table.p_v)
    with pytest.warns(RuntimeWarning):
        q1 = fit_q(table, None, 1, 1e9, sc)
    with pytest.warns(RuntimeWarning):
        q0 = fit_q(table, None, 1, -1.0, sc)
    X = table.features(np.flatnonzero(table.s == 1), "x")
    assert np.all(q1.predict(X) == 1.0) and np.all(q0.predict(X) == 0.0)
    with pytest.raises(NuisanceError):
        fit_q(table, None, 1, np.inf, sc)


def test_q_law_of_total_expectation(sim20k):
    t = sim20k.table
    o = Oracle(sim20k.config)
    sc = o.abs_scorer(1)
    r = 3.0
    q = fit_q(t, None, 1, r, sc)
    treated = np.flatnonzero(t.treated(1))
    frac = np.mean(sc.score(t.outcomes(treated), t.v[treated]) <= r)
    assert q.predict(t.features(treated, "x")).mean() == pytest.approx(frac, abs=0.01)


def test_m_of_constant(table):
    m = fit_m(table, None, constant(0.3, table.p_v + table.p_u, classifier=True))
    assert np.allclose(m.predict(table.v), 0.3)


def test_m_of_v_function(table):
    p_v = table.p_v
    qfn = function_model(lambda X: expit(X[:, 0] - 0.5 * X[:, 1]), p_v + table.p_u)
    m = fit_m(table, None, qfn, LearnerSpec("tree-ensemble", {"n_trees": 200}))
    grid = np.random.default_rng(1).normal(size=(200, p_v))
    assert np.abs(m.predict(grid) - expit(grid[:, 0] - 0.5 * grid[:, 1])).mean() < 0.06
    assert (m.predict(grid * 10) >= 0).all() and (m.predict(grid * 10) <= 1).all()


def test_m_reweighting_identity(sim20k):
    # target mean of m equals the shift-reweighted source mean of q
    t = sim20k.table
    o = Oracle(sim20k.config)
    sc = o.abs_scorer(1)
    q = fit_q(t, None, 1, 3.0, sc)
    m = fit_m(t, None, q)
    k = fit_kappa(t)
    src = np.flatnonzero(t.s == 1)
    tgt = np.flatnonzero(t.s == 0)
    lhs = m.predict(t.v[tgt]).mean()
    rhs = np.sum(shift_ratio(t, src, k) * q.predict(t.features(src, "x"))) / tgt.size
    assert lhs == pytest.approx(rhs, abs=0.02)


def test_q_monotone_in_r(table):
    sc = _abs_scorer(table.p_v)
    X = table.features(np.flatnonzero(table.s == 1), "x")
    preds = [fit_q(table, None, 1, r, sc).predict(X).mean() for r in (0.5, 1.0, 1.5, 2.0, 3.0)]
    assert np.all(np.diff(preds) >= -0.02)


def test_spec_presets_roundtrip():
    spec = NuisanceSpec.from_dict({"preset": "fast", "trim": [0.01, 0.99], "g": {"kind": "logistic", "penalty": 0.5}})
    assert spec.trim == (0.01, 0.99) and spec.g.params["penalty"] == 0.5
    assert NuisanceSpec.from_dict(spec.as_dict()).as_dict() == spec.as_dict()
