import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesinchart.errors import NotContractive
from pesinchart.manifolds import (RepresentingFunction, admissibility, alpha_norm, contraction_trace,
                                  graph_transform_s, graph_transform_u, intersect, local_manifold, make_manifold,
                                  manifold_dist, manifold_dist_c1, measure_params, neumann_bound,
                                  stays_in_windows_check)

LAM_S = (3 - math.sqrt(5)) / 2


def _const(c, out_dim=1):
    return lambda t: np.full((len(t), out_dim), c)


def test_params_of_simple_graphs():
    z = RepresentingFunction.zero("u", 0.1, 17, 1, 1)
    p = measure_params(z, 1.0)
    assert (p.sigma, p.gamma, p.phi, p.q) == (0.0, 0.0, 0.0, 0.1)
    c = RepresentingFunction.from_function("u", 0.1, 17, 1, _const(-3e-4))
    p = measure_params(c, 1.0)
    assert p.sigma < 1e-15 and p.gamma == 0 and p.phi == pytest.approx(3e-4)
    m = np.array([[0.2, -0.1]])
    lin = RepresentingFunction.from_function("s", 0.1, 9, 2, lambda t: t @ m.T)
    p = measure_params(lin, 1.0)
    assert p.gamma == pytest.approx(0.3, abs=1e-12)
    assert p.sigma == pytest.approx(0.3, abs=1e-12)


def test_representing_function_guards():
    with pytest.raises(ValueError):
        RepresentingFunction.zero("u", 0.1, 7, 1, 1)
    r = RepresentingFunction.zero("u", 0.1, 9, 1, 1)
    _, outside = r.evaluate([[0.2]])
    assert outside


def test_alpha_norm_examples():
    pts = np.linspace(-1, 1, 21)[:, None]
    zero = np.zeros((21, 2, 2))
    assert alpha_norm(zero, pts, 0.5) == 0.0
    assert neumann_bound(0.0) == 1.0
    c = 0.3
    e = np.broadcast_to(c * np.eye(2), (21, 2, 2))
    nrm = alpha_norm(e, pts, 0.5)
    assert nrm == pytest.approx(c)
    inv = np.linalg.inv(np.eye(2) + e)
    assert alpha_norm(inv, pts, 0.5) == pytest.approx(1 / (1 + c))
    assert alpha_norm(inv, pts, 0.5) <= neumann_bound(nrm)
    with pytest.raises(NotContractive):
        neumann_bound(1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.1, 3))
def test_alpha_norm_submultiplicative(a, b, fa, fb):
    t = np.linspace(-1, 1, 15)
    pts = t[:, None]
    e = np.stack([[[0.3 * np.sin(fa * x), a * 0.1], [0.1 * x, 0.2]] for x in t])
    f = np.stack([[[0.2 * np.cos(fb * x), 0.0], [b * 0.1 * x ** 2, 0.1]] for x in t])
    lhs = alpha_norm(e @ f, pts, 0.5)
    assert lhs <= alpha_norm(e, pts, 0.5) * alpha_norm(f, pts, 0.5) * (1 + 1e-12)


def test_intersect_eigenlines(cat2_origin):
    vu = make_manifold(cat2_origin, "u")
    vs = make_manifold(cat2_origin, "s")
    res = intersect(vu, vs)
    assert res.iterations == 1
    assert np.all(res.coords == 0) and np.allclose(res.point, 0)


def test_intersect_constants_and_lipschitz(cat2_origin):
    r = cat2_origin.eta.value
    c1, c2 = 2e-3 * r, -3e-3 * r
    vu = make_manifold(cat2_origin, "u", _const(c1))
    vs = make_manifold(cat2_origin, "s", _const(c2))
    res = intersect(vu, vs)
    assert np.allclose(res.coords, [c1, c2], atol=1e-18)
    eta = 1e-3 * r
    f = lambda t: 0.1 * t + c1  # noqa: E731
    g = lambda t: -0.2 * t + c2  # noqa: E731
    p0 = intersect(make_manifold(cat2_origin, "u", f), make_manifold(cat2_origin, "s", g)).coords
    p1 = intersect(make_manifold(cat2_origin, "u", lambda t: f(t) + eta),
                   make_manifold(cat2_origin, "s", lambda t: g(t) - eta)).coords
    assert np.max(np.abs(p1 - p0)) <= 3 * 2 * eta


def test_cat2_graph_transform_examples(cat2, cat2_origin):
    v = cat2_origin
    zero = make_manifold(v, "u")
    out, rep = graph_transform_u(cat2, v, v, zero)
    assert np.max(np.abs(out.repr.values)) < 1e-18
    assert rep.converged
    c = 1e-4 * v.eta.value
    out, _ = graph_transform_u(cat2, v, v, make_manifold(v, "u", _const(c)))
    assert out.params.phi == pytest.approx(LAM_S * c, rel=1e-10)
    out_s, _ = graph_transform_s(cat2, v, v, make_manifold(v, "s", _const(c)))
    assert out_s.params.phi == pytest.approx(LAM_S * c, rel=1e-10)
    with pytest.raises(ValueError):
        graph_transform_u(cat2, v, v, make_manifold(v, "s"))


def test_local_manifold_independent_of_seed(pcat2, pcat2_origin):
    win = [pcat2_origin] * 41
    eta = pcat2_origin.eta.value
    a = local_manifold(pcat2, win, "s", 20, grid_res=17).manifold
    b = local_manifold(pcat2, win, "s", 20, seed=_const(5e-4 * eta), grid_res=17).manifold
    assert manifold_dist(a, b) <= 1e-12
    assert manifold_dist_c1(a, b) <= 1e-6
    assert admissibility(a, 0.1)["admissible"]


def test_local_manifold_trace_rate(pcat2, pcat2_origin):
    res = local_manifold(pcat2, [pcat2_origin] * 17, "u", 8, grid_res=17, trace=True)
    tr = [t for t in res.trace if t > 1e-17]
    ratios = [b / a for a, b in zip(tr[2:-1], tr[3:])]
    assert all(r <= math.exp(-0.25) for r in ratios)


def test_contraction_two_seeds(pcat2, pcat2_origin):
    eta = pcat2_origin.eta.value
    tr = contraction_trace(pcat2, [pcat2_origin] * 8, "u", [None, _const(4e-4 * eta)], 17)
    assert max(tr["ratios"]) <= math.exp(-0.25)
    assert all(ok for step in tr["reports"] for rep in step for *_, ok in rep.recurrences.values())


def test_stays_in_windows(cat2, cat2_origin, pcat2, pcat2_origin):
    win = [cat2_origin] * 41
    assert stays_in_windows_check(cat2, make_manifold(cat2_origin, "s"), win)["ok"]
    r = cat2_origin.p_u.value
    displaced = make_manifold(cat2_origin, "u", _const(0.5 * r))
    assert not stays_in_windows_check(cat2, displaced, win)["ok"]
    pw = [pcat2_origin] * 41
    man = local_manifold(pcat2, pw, "s", 20, grid_res=17).manifold
    assert stays_in_windows_check(pcat2, man, pw)["ok"]
