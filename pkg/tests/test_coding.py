import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from pesinchart.chains import Chain, build_alphabet, orbit_segment, orbit_to_chain, periodic_orbit, periodic_points
from pesinchart.charts import SizeLedger
from pesinchart.coding import (box_confinement_point, code_point, equivariance_defect, fit_decay, hoelder_modulus,
                               inverse_diagnostics, net_distance, net_snap, orthogonal_net)
from pesinchart.errors import NotSameOrbit
from pesinchart.pipeline import hoelder
from pesinchart.system import distance, torus_delta


def _stationary_chain(system, origin, n=12):
    return Chain([origin] * (2 * n + 1), n, np.zeros((2 * n + 1, system.dim)))


def test_fixed_point_codes_to_zero(cat2, cat2_origin):
    cp = code_point(cat2, _stationary_chain(cat2, cat2_origin), 10)
    assert float(distance(cp.point, np.zeros(2))) < 1e-15
    assert cp.residual < 1e-12 and cp.in_box


def test_period_three_coded_point(cat2):
    p = periodic_points(cat2, 3, 1, np.random.default_rng(4))[0]
    orb = periodic_orbit(cat2, p, 3, -150, 150)
    alph = build_alphabet(cat2, orb[147:153], 0.1, 0.5)
    ch = orbit_to_chain(cat2, alph, orb, 150, 12)
    cp = code_point(cat2, ch, 10)
    a3 = np.linalg.matrix_power(cat2.linear_part, 3)
    assert np.max(np.abs(torus_delta(a3 @ cp.point, cp.point))) < 1e-12
    assert equivariance_defect(cat2, cp, 10) < 1e-12


def test_pcat2_chain_shadows_orbit(pcat2):
    seg = orbit_segment(pcat2, np.array([0.61, 0.13]), -130, 130)
    alph = build_alphabet(pcat2, seg[110:151], 0.1, 0.5, rng=np.random.default_rng(8))
    ch = orbit_to_chain(pcat2, alph, seg, 130, 12)
    cp = code_point(pcat2, ch, 10, grid_res=17)
    assert float(distance(cp.point, seg[130])) <= ch[0].eta.value
    assert equivariance_defect(pcat2, cp, 10) < 1e-6


def test_code_point_needs_window(cat2, cat2_origin):
    with pytest.raises(ValueError):
        code_point(cat2, _stationary_chain(cat2, cat2_origin, 4), 10)


def test_hoelder_identical_chains(cat2, cat2_origin):
    ch = _stationary_chain(cat2, cat2_origin)
    rows = hoelder_modulus(cat2, ch, {n: ch for n in (2, 3)}, 10, 17)
    assert all(r["c0"] == 0 and r["c1"] == 0 for r in rows)
    assert fit_decay(rows) == 0.0


def test_fit_decay_recovers_rate():
    rows = [{"n": n, "c0": 3.0 * 0.4 ** n} for n in range(2, 11)]
    assert fit_decay(rows) == pytest.approx(0.4, rel=1e-12)


def test_pcat2_fitted_decay(pcat2_run):
    rows = hoelder(pcat2_run)
    assert fit_decay(rows) <= math.exp(-pcat2_run.cfg.beta * pcat2_run.cfg.chi / 6) + 0.05


def test_orthogonal_net_density():
    radius = 0.5 * 0.1 ** (1 / 3)
    net = orthogonal_net(2, radius, np.random.default_rng(0))
    mats = ortho_group.rvs(2, size=1000, random_state=np.random.default_rng(1))
    assert np.max(net_distance(net, mats)) <= radius
    j, dist = net_snap(net, np.eye(2))
    assert dist < 1e-15 and np.allclose(net[j], np.eye(2))


def test_inverse_trivial(cat2, cat2_origin):
    ch = _stationary_chain(cat2, cat2_origin, 5)
    recs = inverse_diagnostics(cat2, ch, ch, np.zeros(2), np.zeros(2))
    for r in recs:
        assert r.ok
        assert r.distance == 0 and r.translation == 0 and r.r_minus_id < 1e-14
        assert r.frame_ratio == 1.0 and r.remainder_derivative < 1e-12
    with pytest.raises(NotSameOrbit):
        inverse_diagnostics(cat2, ch, ch, np.zeros(2), np.array([0.1, 0.0]))


def test_inverse_ledger_integers(cat2, cat2_origin):
    ch = _stationary_chain(cat2, cat2_origin, 5)
    eps = cat2_origin.p_s.epsilon
    other = cat2_origin.with_sizes(SizeLedger(cat2_origin.p_s.ell + 2, eps), SizeLedger(cat2_origin.p_u.ell + 5, eps))
    ch2 = Chain([other] * len(ch.vertices), ch.center)
    recs = inverse_diagnostics(cat2, ch, ch2)
    assert all(r.ell_s_diff == 2 and r.ell_u_diff == 5 for r in recs)
    assert recs[0].ell_bound == math.ceil(3 * eps ** (-2 / 3))
    assert all(r.flags["ledger"] for r in recs)


def test_box_oracle_cat2_eigenline(cat2, cat2_origin):
    r = cat2_origin.p_s.value
    for t in np.linspace(-r, r, 5):
        assert abs(box_confinement_point(cat2, cat2_origin, t)) <= 1e-10
