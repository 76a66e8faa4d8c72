import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesinchart.charts import (LITERAL, PRACTICAL, PesinChart, SizeLedger, block_form_report, chart_frame,
                               chart_frames, f0_bound, frame_norm_ratio, kappa, overlap_test, q_lemma_checks, q_size,
                               reduced_cocycle, s_norm2, tempered_size, transition_decompose, u_norm2)
from pesinchart.errors import NonSummable, WindowTooShort
from pesinchart.system import oseledets

LAM_S = (3 - math.sqrt(5)) / 2
# 2 / (1 - lambda_s^2 e^{2 chi}) at chi = 0.5, evaluated with 30-digit arithmetic
CAT2_S2_UNIT = 3.31450679086405099380723435229


@given(st.integers(0, 10**6), st.sampled_from([0.05, 0.1, 0.3]))
def test_ledger_round_trip(ell, eps):
    q = SizeLedger(ell, eps)
    assert SizeLedger.from_log(q.log_value, eps).ell == ell


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_ledger_min_is_smaller_size(a, b):
    qa, qb = SizeLedger(a, 0.1), SizeLedger(b, 0.1)
    assert qa.min(qb).ell == max(a, b)
    assert qa.times_e_eps().ell == max(a - 3, 1)


def test_cat2_series_closed_form(cat2):
    sp = oseledets(cat2, np.array([0.4, 0.1]), 64)
    xi = sp.stable_basis[:, 0]
    assert abs(s_norm2(cat2, sp, xi, 0.5) - CAT2_S2_UNIT) <= 1e-10
    assert s_norm2(cat2, sp, 2 * xi, 0.5) == pytest.approx(4 * CAT2_S2_UNIT, rel=1e-14)


def test_series_first_term_and_stack(pcat2):
    sp = oseledets(pcat2, np.array([0.7, 0.3]), 64)
    xis = sp.stable_basis[:, 0] * np.array([[0.5], [1.0], [3.0]])
    vals = s_norm2(pcat2, sp, xis, 0.5)
    assert vals.shape == (3,)
    assert np.all(vals >= 2 * np.sum(xis ** 2, axis=1))
    assert vals[1] == pytest.approx(s_norm2(pcat2, sp, xis[1], 0.5), rel=1e-14)
    with pytest.raises(ValueError):
        s_norm2(pcat2, sp, sp.unstable_basis[:, 0], 0.5)


def test_series_stalls_near_exponent(plastic3):
    sp = oseledets(plastic3, np.array([0.1, 0.2, 0.3]), 128, chi_floor=0.1)
    with pytest.raises(NonSummable):
        s_norm2(plastic3, sp, sp.stable_basis[:, 0], 0.1406)


def test_cat2_frame_is_eigenbasis(cat2):
    fr = chart_frame(cat2, np.array([0.2, 0.9]), 0.5)
    d = reduced_cocycle(cat2, fr, fr)
    assert np.allclose(np.abs(np.diag(d)), [LAM_S, 1 / LAM_S], atol=1e-12)
    assert abs(d[0, 1]) + abs(d[1, 0]) < 1e-12


@pytest.mark.parametrize("name", ["cat2", "plastic3", "pcat2"])
def test_frame_isometry(name, request):
    sy = request.getfixturevalue(name)
    chi = 0.1 if name == "plastic3" else 0.5
    win = 128 if name == "plastic3" else 64
    x = np.random.default_rng(2).random(sy.dim)
    sp = oseledets(sy, x, win, chi_floor=chi)
    fr = chart_frame(sy, sp, chi)
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = sp.stable_basis @ rng.normal(size=sp.s_index)
        b = sp.unstable_basis @ rng.normal(size=sy.dim - sp.s_index)
        lhs = float(np.sum((fr.c_inverse @ (a + b)) ** 2))
        rhs = s_norm2(sy, sp, a, chi) + u_norm2(sy, sp, b, chi)
        assert lhs == pytest.approx(rhs, rel=1e-8)
    w = rng.normal(size=(100, sy.dim))
    assert np.all(np.linalg.norm(w @ fr.c_matrix.T, axis=1) <= np.linalg.norm(w, axis=1) * (1 + 1e-12))


def test_block_report_pcat2(pcat2):
    xs = np.array([[0.3, 0.4]])
    xs = np.concatenate([xs, pcat2.map(xs)])
    fa, fb = chart_frames(pcat2, xs, 0.5)
    rep = block_form_report(pcat2, fa, fb, 1e-5)
    assert all(r["ok"] for r in rep.values()), rep
    assert fa.kappa == kappa(0.5, pcat2.m_f)
    ratio = frame_norm_ratio(pcat2, fa, fb)
    f0 = f0_bound(0.5, pcat2.m_f)
    assert 1 / f0 <= ratio <= f0


def test_linear_frame_ratio_is_one(cat2):
    fa, fb = chart_frames(cat2, np.array([[0.1, 0.2], [0.5, 0.5]]), 0.5)
    assert frame_norm_ratio(cat2, fa, fb) == pytest.approx(1.0, abs=1e-13)


def test_q_size_literal_bounds(cat2):
    fr = chart_frame(cat2, np.zeros(2), 0.5)
    q = q_size(fr, 0.1, 1.0, LITERAL)
    chk = q_lemma_checks(q, fr.c_inv_norm, 1.0)
    assert chk["q_below_eps_power"] and chk["cinv_power_bound"]
    assert q.ell == math.ceil(-3 * LITERAL.log_q_tilde(0.1, 1.0, fr.c_inv_norm) / 0.1)


def test_q_size_doubling_shift(cat2):
    fr = chart_frame(cat2, np.zeros(2), 0.5)
    eps = 0.1
    base = LITERAL.log_q_tilde(eps, 1.0, fr.c_inv_norm)
    doubled = LITERAL.log_q_tilde(eps, 1.0, 2 * fr.c_inv_norm)
    assert base - doubled == pytest.approx(48 * math.log(2), rel=1e-14)
    e1 = SizeLedger.from_log(base, eps).ell
    e2 = SizeLedger.from_log(doubled, eps).ell
    step = 48 * 3 * math.log(2) / eps
    assert e2 - e1 in (math.floor(step), math.ceil(step))


def test_tempered_constant_sequence():
    q = [SizeLedger(30, 0.1)] * 81
    t = tempered_size(q, 0.1, 32)
    assert t.ratio_ok and t.below_q_ok
    assert len({s.ell for s in t.sizes}) == 1
    with pytest.raises(WindowTooShort):
        tempered_size(q[:40], 0.1, 32)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 300), st.lists(st.integers(-3, 3), min_size=70, max_size=90))
def test_tempered_ratio_and_minorant(start, steps):
    # slowly varying inputs; a truncated kernel cannot temper arbitrary jumps at its window edge
    ells = np.maximum(start + np.cumsum(steps), 0)
    q = [SizeLedger(int(e), 0.1) for e in ells]
    t = tempered_size(q, 0.1, 32)
    assert t.ratio_ok and t.below_q_ok


def _chart(frame, ell, eps=0.1):
    return PesinChart(frame, SizeLedger(min(ell, 10), eps), SizeLedger(ell, eps))


def test_overlap_identity_and_ledger(cat2):
    fr = chart_frame(cat2, np.zeros(2), 0.5)
    a = _chart(fr, 20)
    rep = overlap_test(a, a, PRACTICAL)
    assert rep.ok and rep.lhs == 0.0
    assert not overlap_test(a, _chart(fr, 24), PRACTICAL).ok
    assert overlap_test(a, _chart(fr, 22), PRACTICAL).ok


def test_overlap_distance_threshold(cat2):
    from dataclasses import replace
    fr = chart_frame(cat2, np.zeros(2), 0.5)
    a = _chart(fr, 20)
    thr = math.exp(PRACTICAL.log_overlap_threshold(a.eta.log_value, a.eta.log_value))
    near = replace(fr, point=np.array([thr * 0.999, 0.0]))
    far = replace(fr, point=np.array([thr * 1.001, 0.0]))
    assert overlap_test(a, _chart(near, 20), PRACTICAL).ok
    assert not overlap_test(a, _chart(far, 20), PRACTICAL).ok


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 40), st.integers(10, 40), st.floats(0, 1e-5))
def test_overlap_symmetric_and_monotone(l1, l2, off):
    from dataclasses import replace
    from pesinchart.system import make_builtin
    fr = chart_frame(make_builtin("cat2"), np.zeros(2), 0.5)
    other = replace(fr, point=np.array([off, 0.0]))
    a, b = _chart(fr, l1), _chart(other, l2)
    r = overlap_test(a, b, PRACTICAL).ok
    assert r == overlap_test(b, a, PRACTICAL).ok
    if r and l1 > 10 and l2 > 10:
        # larger admitted sizes keep the overlap
        assert overlap_test(_chart(fr, l1 - 1), _chart(other, l2 - 1), PRACTICAL).ok


def test_transition_cat2_is_linear(cat2, cat2_origin):
    fr = cat2_origin.frame
    ch = cat2_origin.chart()
    dec = transition_decompose(cat2, ch, ch, fr, 9)
    assert np.max(np.abs(dec.h_values)) < 1e-15
    assert abs(abs(dec.d_s[0, 0]) - LAM_S) < 1e-12
    assert all(dec.checks.values())


def test_transition_pcat2_bounds(pcat2, pcat2_origin):
    ch = pcat2_origin.chart()
    dec = transition_decompose(pcat2, ch, ch, pcat2_origin.frame, 17)
    assert all(dec.checks.values()), dec.checks
    assert np.max(np.abs(dec.h_origin)) < 1e-15
    assert dec.dh_origin_norm < 1e-12
