"""Sampled cover cells Z(v), Smale brackets and the symbolic Markov property."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chains import (Alphabet, Chain, DoubleChart, census_bound, homoclinic_orbit, homoclinic_segment,
                     orbit_to_chain, periodic_orbit)
from .coding import CodedPoint
from .errors import NoVertexFound
from .manifolds import intersect, manifold_dist, manifold_points
from .system import SmoothSystem, distance, torus_delta

__all__ = [
    "CoverCell", "BracketResult", "fixed_point_chain", "excursion_chain", "splice_at_zero", "cell_sample_chains",
    "build_cover", "local_finiteness_census", "smale_bracket",
    "bracket_uniqueness", "commuting_residual", "markov_property_check", "cover_summary",
]


@dataclass
class CoverCell:
    vertex: DoubleChart
    members: list = field(default_factory=list)      # CodedPoint
    untagged: int = 0                                   # rejected chains without recurrence tags
    leaf_index: dict = field(default_factory=dict)     # member position -> (s leaf id, u leaf id)

    @property
    def key(self):
        return self.vertex.ident()


@dataclass(frozen=True)
class BracketResult:
    x: CodedPoint
    y: CodedPoint
    bracket: np.ndarray
    residual: float
    coords: np.ndarray
    in_box: bool


def fixed_point_chain(system: SmoothSystem, alph: Alphabet, p, n: int, lead: int = 60,
                      half_window: int = 32) -> Chain:
    ext = n + lead + half_window
    orb = periodic_orbit(system, p, 1, -ext, ext)
    return orbit_to_chain(system, alph, orb, ext, n, lead, half_window)


def excursion_chain(system: SmoothSystem, alph: Alphabet, base: Chain, m, side: str, half: int = 30,
                    lead: int = 60, half_window: int = 32) -> Chain:
    """Chain through the 0-vertex of ``base`` following a homoclinic excursion of its fixed point.

    side "u": the excursion lies in the future (coded point on the unstable leaf);
    side "s": it lies in the past.
    """
    v0 = base[0]
    n = base.hi
    p = base.points[base.center] if base.points is not None else v0.point
    z = homoclinic_orbit(system, p, m, half)
    target = alph.pos_key(p)
    ext = n + lead + half_window
    for k in range(1, half + 1):
        idx = -k if side == "u" else k
        if alph.pos_key(z[idx + half]) != target:
            continue
        seg = homoclinic_segment(system, p, z, idx - ext, idx + ext)
        try:
            ch = orbit_to_chain(system, alph, seg, ext, n, lead, half_window)
        except NoVertexFound:
            continue
        if ch[0].ident() == v0.ident():
            return ch
    raise NoVertexFound(f"no excursion chain through the base vertex for translation {tuple(m)}", 0)


def splice_at_zero(system: SmoothSystem, past: Chain, future: Chain, alph: Alphabet | None = None) -> Chain:
    """Past of one chain glued to the future of another sharing the 0-vertex."""
    if past[0].ident() != future[0].ident():
        raise ValueError("chains do not share the 0-vertex")
    verts = past.vertices[:past.center] + future.vertices[future.center:]
    ch = Chain(verts, past.center)
    bad = ch.validate(system, alph.constants, alph.frames) if alph else ch.validate(system)
    if bad:
        raise NoVertexFound(f"spliced chain fails the edge relation at index {bad[0]}", bad[0])
    return ch


def cell_sample_chains(system: SmoothSystem, alph: Alphabet, p, translations, n: int) -> list[Chain]:
    """Chains with a common 0-vertex at the fixed point p.

    The fixed-point chain, one excursion chain per translation and side, and
    every past/future splice of those.
    """
    base = fixed_point_chain(system, alph, p, n)
    us, ss = [], []
    for m in translations:
        us.append(excursion_chain(system, alph, base, m, "u"))
        ss.append(excursion_chain(system, alph, base, m, "s"))
    out = [base] + us + ss
    out += [splice_at_zero(system, a, b, alph) for a in ss for b in us]
    return out


def build_cover(coded: list[CodedPoint], tol: float = 1e-6, require_tags: bool = True,
                same_point: float = 1e-9) -> tuple[list[CoverCell], dict]:
    """Group coded points by their 0-vertex; check leaf independence inside cells."""
    cells: dict[tuple, CoverCell] = {}
    for cp in coded:
        v = cp.chain[0]
        cell = cells.setdefault(v.ident(), CoverCell(v))
        if require_tags and cp.chain.recurrence_tags() is None:
            cell.untagged += 1
            continue
        cell.members.append(cp)
    checks = {"pairs": 0, "max_vs_distance": 0.0, "ok": True}
    for cell in cells.values():
        leaves_s: list[CodedPoint] = []
        leaves_u: list[CodedPoint] = []
        for j, cp in enumerate(cell.members):
            sid = next((i for i, o in enumerate(leaves_s) if manifold_dist(o.vs, cp.vs) <= tol), None)
            if sid is None:
                leaves_s.append(cp)
                sid = len(leaves_s) - 1
            uid = next((i for i, o in enumerate(leaves_u) if manifold_dist(o.vu, cp.vu) <= tol), None)
            if uid is None:
                leaves_u.append(cp)
                uid = len(leaves_u) - 1
            cell.leaf_index[j] = (sid, uid)
        # same coded point through different chains must give the same stable leaf
        for a in range(len(cell.members)):
            for b in range(a + 1, len(cell.members)):
                x, y = cell.members[a], cell.members[b]
                if float(distance(x.point, y.point)) <= same_point:
                    dv = manifold_dist(x.vs, y.vs)
                    checks["pairs"] += 1
                    checks["max_vs_distance"] = max(checks["max_vs_distance"], dv)
                    checks["ok"] &= dv <= tol
    out = sorted((c for c in cells.values() if c.members), key=lambda c: c.key)
    return out, checks


def local_finiteness_census(cover: list[CoverCell], alph: Alphabet | None, tol: float = 1e-10) -> list[dict]:
    """For each cell: number of cells whose samples meet it, and the census bound."""
    pts = [np.array([m.point for m in c.members]) for c in cover]
    rows = []
    for i, ci in enumerate(cover):
        count = 0
        inclusion = True
        for j, cj in enumerate(cover):
            dmin = float(np.min(distance(pts[i][:, None, :], pts[j][None, :, :])))
            if dmin <= tol:
                count += 1
                if i != j:
                    # samples of Z(v) sit in the chart box of w at scale q^s wedge q^u
                    w = cj.vertex
                    coords = torus_delta(pts[i], w.point) @ w.frame.c_inverse.T
                    inclusion &= bool(np.max(np.abs(coords)) <= w.eta.value)
        bound = census_bound(alph, ci.vertex) if alph is not None else None
        rows.append({"cell": i, "members": len(ci.members), "count": count, "bound": bound,
                     "ok": bound is None or count <= bound, "inclusion": inclusion})
    return rows


def smale_bracket(cell: CoverCell, x: CodedPoint, y: CodedPoint, tol: float = 1e-14,
                  w0=None) -> BracketResult:
    """[x, y]_Z: the u-leaf of x meets the s-leaf of y."""
    if x.chain[0].ident() != cell.key or y.chain[0].ident() != cell.key:
        raise ValueError("points are not members of the cell")
    res = intersect(x.vu, y.vs, tol, w0=w0)
    return BracketResult(x, y, res.point, res.residual, res.coords, res.in_box)


def bracket_uniqueness(cell: CoverCell, x: CodedPoint, y: CodedPoint, rng: np.random.Generator,
                       starts: int = 5, tol: float = 1e-14) -> float:
    """Spread of brackets found from random starting points."""
    base = smale_bracket(cell, x, y, tol).bracket
    spread = 0.0
    r = x.vu.repr.radius
    for _ in range(starts):
        w0 = rng.uniform(-r, r, x.vu.repr.in_dim) * 0.5
        other = smale_bracket(cell, x, y, tol, w0=w0).bracket
        spread = max(spread, float(distance(base, other)))
    return spread


def commuting_residual(system: SmoothSystem, cell0: CoverCell, cell1: CoverCell, x: CodedPoint, y: CodedPoint,
                       fx: CodedPoint, fy: CodedPoint) -> float:
    """d(f([x, y]_{Z(v0)}), [f x, f y]_{Z(v1)})."""
    b0 = smale_bracket(cell0, x, y).bracket
    b1 = smale_bracket(cell1, fx, fy).bracket
    return float(distance(system.map(b0), b1))


def markov_property_check(system: SmoothSystem, x: CodedPoint, fx: CodedPoint, tol: float = 1e-5,
                          samples: int = 33) -> dict:
    """f maps the s-leaf of x into the s-leaf of f(x); f^{-1} maps the u-leaf of f(x) into that of x."""
    out = {}
    for kind in ("s", "u"):
        src, dst = (x, fx) if kind == "s" else (fx, x)
        leaf = src.vs if kind == "s" else src.vu
        target = dst.vs if kind == "s" else dst.vu
        step = system.map if kind == "s" else system.inverse_map
        r = leaf.repr.radius
        axis = np.linspace(-r, r, samples)
        nodes = np.stack([m.ravel() for m in np.meshgrid(*([axis] * leaf.repr.in_dim), indexing="ij")], -1)
        img = step(manifold_points(system, leaf, nodes))
        fr = target.chart.frame
        coords = torus_delta(img, fr.point) @ fr.c_inverse.T
        s = fr.s_index
        dom = coords[:, :s] if kind == "s" else coords[:, s:]
        val = coords[:, s:] if kind == "s" else coords[:, :s]
        pred, outside = target.repr.evaluate(dom)
        inside = np.all(np.abs(dom) <= target.repr.radius, axis=-1)
        resid = np.max(np.abs(val - pred), axis=-1)
        passed = inside & (resid <= tol)
        out[kind] = {"samples": int(len(nodes)), "passed": int(passed.sum()), "inside": int(inside.sum()),
                     "max_residual": float(np.max(resid[inside])) if inside.any() else float("nan"),
                     "flags": passed.tolist()}
    return out


def cover_summary(cover: list[CoverCell], census: list[dict], markov: list[dict], extra: dict | None = None) -> dict:
    total = sum(r[k]["samples"] for r in markov for k in ("s", "u"))
    passed = sum(r[k]["passed"] for r in markov for k in ("s", "u"))
    return {
        "cells": [{"cell": i, "point": c.vertex.point.tolist(), "ell_q": c.vertex.q_eps.ell,
                   "ell_s": c.vertex.p_s.ell, "ell_u": c.vertex.p_u.ell, "members": len(c.members),
                   "untagged": c.untagged} for i, c in enumerate(cover)],
        "census": census,
        "markov": {"samples": total, "passed": passed, "rate": passed / total if total else float("nan")},
        **(extra or {}),
    }
