import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcconformal.data import DataError, ObservationTable
from rcconformal.learners import LearnerSpec
from rcconformal.nuisance import NuisanceSpec, fit_g, fit_kappa, fit_two_stage_mean, function_model
from rcconformal.scores import ConformityScorer, build_abs_scorer, build_cqr_scorer, score_batch

from conftest import toy_table


def abs_scorer(center=1.0, p_v=1):
    return ConformityScorer("abs", 1, eta_model=function_model(lambda V: np.full(len(V), center), p_v))


def cqr_scorer(lo=0.0, hi=2.0, p_v=1):
    return ConformityScorer("cqr", 1, lo_model=function_model(lambda V: np.full(len(V), lo), p_v),
                            hi_model=function_model(lambda V: np.full(len(V), hi), p_v), alpha=0.1)


def test_abs_examples():
    sc = abs_scorer(1.0)
    v = np.zeros((1, 1))
    assert sc.score(1.0, v)[0] == 0.0
    assert sc.score(1.7, v)[0] == pytest.approx(0.7)
    assert sc.score(0.3, v)[0] == pytest.approx(0.7)


def test_cqr_sign_and_boundary():
    sc = cqr_scorer(0.0, 2.0)
    v = np.zeros((1, 1))
    assert sc.score(1.0, v)[0] < 0
    assert sc.score(2.0, v)[0] == 0.0
    assert sc.score(0.0, v)[0] == 0.0
    assert sc.score(3.0, v)[0] == pytest.approx(1.0)


def test_cqr_crossing_band_is_sorted():
    sc = cqr_scorer(2.0, 0.0)
    lo, hi = sc.band(np.zeros((1, 1)))
    assert lo[0] == 0.0 and hi[0] == 2.0


def test_build_abs_from_two_stage_mean(table):
    mp = fit_two_stage_mean(table, 1, NuisanceSpec.fast())
    sc = build_abs_scorer(mp)
    assert sc.a == 1
    v = table.v[:5]
    assert np.allclose(sc.score(mp.predict(v), v), 0.0)
    assert np.allclose(sc.score(mp.predict(v) + 0.4, v), 0.4)


def test_cqr_gaussian_half_width():
    rng = np.random.default_rng(0)
    n = 20_000
    v = rng.normal(size=(n, 1))
    y = v[:, 0] + rng.normal(size=n)
    t = ObservationTable.from_full(v, np.ones(n, int), y, rng.integers(0, 2, n), rng.normal(size=(n, 1)))
    t = ObservationTable.from_full(v, (rng.random(n) < 0.9).astype(int), y, t.a.filled(0), t.u.filled(0))
    g, k = fit_g(t, 1), fit_kappa(t)
    sc = build_cqr_scorer(t, np.arange(n), 1, 0.2, g, k)
    lo, hi = sc.band(np.linspace(-1, 1, 21)[:, None])
    half = (hi - lo) / 2
    assert np.allclose(half, 1.2816, rtol=0.1)


def test_cqr_needs_treated_rows(table):
    g, k = fit_g(table, 1), fit_kappa(table)
    tgt = np.flatnonzero(table.s == 0)
    with pytest.raises(Exception):
        build_cqr_scorer(table, tgt, 1, 0.1, g, k)


def test_scorer_validation():
    with pytest.raises(ValueError):
        ConformityScorer("abs", 1)
    with pytest.raises(ValueError):
        ConformityScorer("cqr", 1, lo_model=function_model(np.zeros_like, 1))
    with pytest.raises(ValueError):
        ConformityScorer("huber", 1)


@given(y=st.floats(-1e3, 1e3), c=st.floats(-1e3, 1e3), center=st.floats(-10, 10))
def test_abs_properties(y, c, center):
    sc = abs_scorer(center)
    v = np.zeros((1, 1))
    s = sc.score(y, v)[0]
    assert s >= 0
    # translation: shifting y and the centre together leaves the score unchanged
    assert abs_scorer(center + c).score(y + c, v)[0] == pytest.approx(s, abs=1e-9)


@given(y=st.floats(-100, 100), lo=st.floats(-10, 10), width=st.floats(0, 10))
def test_cqr_properties(y, lo, width):
    sc = cqr_scorer(lo, lo + width)
    s = sc.score(y, np.zeros((1, 1)))[0]
    assert (s <= 0) == (lo <= y <= lo + width)
    assert s >= -width / 2 - 1e-12


def test_score_batch_properties(table):
    mp = fit_two_stage_mean(table, 1, NuisanceSpec.fast())
    sc = build_abs_scorer(mp)
    src = np.flatnonzero(table.s == 1)[:30]
    full = score_batch(sc, table, src)
    # batch equals the map of singletons
    assert np.allclose(full, [score_batch(sc, table, [i])[0] for i in src])
    # permutation equivariance
    perm = np.random.default_rng(0).permutation(src.size)
    assert np.allclose(score_batch(sc, table, src[perm]), full[perm])
    assert score_batch(sc, table, src[:1]).shape == (1,)


def test_score_batch_target_rows_need_y(table):
    sc = abs_scorer(0.0, table.p_v)
    tgt = np.flatnonzero(table.s == 0)[:3]
    with pytest.raises(DataError):
        score_batch(sc, table, tgt)
    assert score_batch(sc, table, tgt, y=np.ones(3)).shape == (3,)
