import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesinchart.chains import (ChartGraph, DoubleChart, build_alphabet, build_graph, census_bound, edge_test,
                               graph_export, graph_from_json, homoclinic_orbit, orbit_segment, orbit_to_chain,
                               periodic_orbit, periodic_points, prune, saturation_report, subordinate_fill)
from pesinchart.charts import SizeLedger
from pesinchart.errors import InfeasibleInput
from pesinchart.system import distance

EPS = 0.1


def L(e):
    return SizeLedger(e, EPS)


def _with(v, frame=None, q=None, ps=None, pu=None):
    return DoubleChart(frame or v.frame, L(q if q is not None else v.q_eps.ell),
                       L(ps if ps is not None else v.p_s.ell), L(pu if pu is not None else v.p_u.ell))


def test_self_edge_at_fixed_point(cat2, cat2_origin):
    rep = edge_test(cat2, cat2_origin, cat2_origin)
    assert rep.ok and not rep.failed


def test_s_index_mismatch(cat2, cat2_origin):
    from dataclasses import replace
    odd = DoubleChart(replace(cat2_origin.frame, s_index=0), cat2_origin.q_eps, cat2_origin.p_s, cat2_origin.p_u)
    rep = edge_test(cat2, cat2_origin, odd)
    assert not rep.ok and not rep.clauses["s_index"]


def test_edge_ledger_clamp(cat2, cat2_origin):
    v = _with(cat2_origin, q=5, ps=5, pu=10)
    ok = edge_test(cat2, v, _with(cat2_origin, q=5, ps=5, pu=7))
    assert ok.clauses["ledger_u"]
    for other in (6, 8, 10):
        assert not edge_test(cat2, v, _with(cat2_origin, q=5, ps=5, pu=other)).clauses["ledger_u"]


def test_subordinate_saturated():
    q = [L(40)] * 11
    ps, pu = subordinate_fill(q, q)
    assert all(p.ell == 40 for p in ps + pu)


def test_subordinate_recovers_from_dip():
    big = [L(20)] * 5 + [L(26)] + [L(20)] * 5
    small = [L(23)] * 5 + [L(26)] + [L(23)] * 5
    _, pu = subordinate_fill(big, small)
    assert [p.ell for p in pu[5:8]] == [26, 23, 20]


def test_subordinate_rejects_bad_input():
    with pytest.raises(InfeasibleInput):
        subordinate_fill([L(10)], [L(5)])
    with pytest.raises(InfeasibleInput):
        subordinate_fill([L(0), L(0)], [L(0), L(4)])


@st.composite
def ledger_pair(draw):
    n = draw(st.integers(3, 40))
    big = draw(st.lists(st.integers(0, 60), min_size=n, max_size=n))
    start = draw(st.integers(0, 30))
    steps = draw(st.lists(st.integers(-3, 3), min_size=n - 1, max_size=n - 1))
    small = [start]
    for s in steps:
        small.append(small[-1] + s)
    shift = max(b - s for b, s in zip(big, small))
    small = [s + max(shift, 0) for s in small]
    return [L(b) for b in big], [L(s) for s in small]


@settings(max_examples=200, deadline=None)
@given(ledger_pair())
def test_subordinate_properties(pair):
    big, small = pair
    ps, pu = subordinate_fill(big, small)
    for k in range(len(big)):
        assert max(ps[k].ell, pu[k].ell) <= small[k].ell
        assert ps[k].ell >= big[k].ell and pu[k].ell >= big[k].ell
    for k in range(len(big) - 1):
        assert pu[k + 1].ell == max(pu[k].ell - 3, big[k + 1].ell)
        assert ps[k].ell == max(ps[k + 1].ell - 3, big[k].ell)
        assert abs(pu[k].ell - pu[k + 1].ell) <= 3 or pu[k + 1].ell == big[k + 1].ell
    rep = saturation_report(big, ps, pu)
    assert set(rep) == {"u_past", "u_future", "s_past", "s_future"}


@pytest.fixture(scope="module")
def pcat2_alphabet(pcat2):
    seg = orbit_segment(pcat2, np.array([0.31, 0.47]), -150, 150)
    alph = build_alphabet(pcat2, seg[100:201], EPS, 0.5, rng=np.random.default_rng(3))
    return alph, seg


def test_alphabet_census_and_sufficiency(pcat2_alphabet):
    alph, seg = pcat2_alphabet
    counts = [alph.census(L(t)) for t in range(100, 260, 10)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    ch = orbit_to_chain(pcat2_alphabet[0].system, alph, seg, 150, 8)
    assert ch.ledger_ratio_ok()
    assert census_bound(alph, ch[0]) >= 1


def test_pos_key_is_periodic(pcat2_alphabet):
    alph, _ = pcat2_alphabet
    x = alph.pos_center((5, 7))
    assert alph.pos_key(x) == alph.pos_key(x + np.array([1.0, -2.0]))
    assert float(distance(alph.pos_center(alph.pos_key(x)), x)) < 1e-15


def test_cat2_alphabet_collapses(cat2):
    seg = orbit_segment(cat2, np.array([0.2, 0.6]), 0, 20)
    alph = build_alphabet(cat2, seg, EPS, 0.5)
    assert len(alph.cells) == len({alph.pos_key(p) for p in seg})
    assert len({c.q_eps.ell for c in alph.cells.values()}) == 1
    side = alph.span + 1
    assert alph.census(L(10**6)) == len(alph.cells) * side * side


def test_fixed_point_chain_constant(cat2):
    orb = periodic_orbit(cat2, np.zeros(2), 1, -120, 120)
    alph = build_alphabet(cat2, orb[:1], EPS, 0.5)
    ch = orbit_to_chain(cat2, alph, orb, 120, 10)
    assert len(set(ch.keys())) == 1
    assert ch.shift(1).validate(cat2) == []


def test_period_three_chain(cat2):
    p = periodic_points(cat2, 3, 1, np.random.default_rng(0))[0]
    orb = periodic_orbit(cat2, p, 3, -120, 120)
    alph = build_alphabet(cat2, orb[117:123], EPS, 0.5)
    ch = orbit_to_chain(cat2, alph, orb, 120, 9)
    keys = ch.keys()
    assert keys[:3] == keys[3:6] == keys[6:9]
    assert len(set(keys)) == 3
    assert ch.recurrence_tags() is not None


def test_homoclinic_orbit_returns_to_fixed_point(pcat2):
    z = homoclinic_orbit(pcat2, np.zeros(2), (1, 0), half=30)
    assert float(distance(z[0], np.zeros(2))) < 1e-9
    assert float(distance(z[-1], np.zeros(2))) < 1e-9
    assert np.max(distance(pcat2.map(z[:-1]), z[1:])) < 1e-12
    assert float(distance(z[30], np.zeros(2))) > 0.05
    with pytest.raises(ValueError):
        homoclinic_orbit(pcat2, np.array([0.3, 0.3]), (1, 0))


def test_graph_exports(cat2, cat2_origin):
    empty = ChartGraph(EPS)
    doc = json.loads(graph_export(empty, "json"))
    assert doc["vertices"] == [] and doc["edges"] == []
    assert "digraph" in graph_export(empty, "dot")
    g = ChartGraph(EPS)
    g.add_edge(cat2_origin, cat2_origin)
    dot = graph_export(g, "dot")
    assert dot.count("->") == 1 and dot.count("[label=") == 1
    with pytest.raises(ValueError):
        graph_export(g, "xml")


def test_graph_round_trip_and_pruning(cat2):
    orb = orbit_segment(cat2, np.array([0.12, 0.77]), -110, 130)
    alph = build_alphabet(cat2, orb[100:131], EPS, 0.5)
    chains = [orbit_to_chain(cat2, alph, orb, c, 5) for c in (110, 120)]
    g = build_graph(cat2, chains, do_prune=False)
    text = graph_export(g, "json")
    back = graph_from_json(text, 0.5)
    assert graph_export(back, "json") == text
    pruned = prune(build_graph(cat2, chains, do_prune=False))
    again = graph_export(prune(pruned), "json")
    assert again == graph_export(pruned, "json")
    ind, outd = pruned.in_degree(), pruned.out_degree()
    assert all(ind[k] >= 1 and outd[k] >= 1 for k in pruned.vertices)
    assert graph_export(build_graph(cat2, chains), "json") == graph_export(build_graph(cat2, chains), "json")
