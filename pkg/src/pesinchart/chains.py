"""Double charts, the edge relation, the sampled alphabet and chains.

Vertices are identified by integer keys: position cell, frame cell and the
ledger indices of Q_eps, p^s and p^u.  Sorting keys gives the canonical
vertex order used by every exporter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import schur

from .charts import (PRACTICAL, ChartConstants, ChartFrame, PesinChart, SizeLedger, chart_frames,
                     overlap_test, q_size, tempered_size)
from .errors import EmptyAlphabet, InfeasibleInput, NoConvergence, NoVertexFound
from .system import SmoothSystem, cocycle, torus_delta, wrap

__all__ = [
    "DoubleChart", "FrameCache", "EdgeReport", "edge_test", "subordinate_fill", "saturation_report",
    "Alphabet", "build_alphabet", "ChartGraph", "build_graph", "prune", "Chain", "orbit_to_chain",
    "graph_export", "graph_from_json", "periodic_orbit", "periodic_points", "stationary_chart",
    "census_bound",
]


@dataclass(frozen=True, eq=False)
class DoubleChart:
    frame: ChartFrame
    q_eps: SizeLedger
    p_s: SizeLedger
    p_u: SizeLedger
    key: tuple = ()

    def __post_init__(self):
        if self.p_s.ell < self.q_eps.ell or self.p_u.ell < self.q_eps.ell:
            raise ValueError("double chart sizes must not exceed Q_eps")

    @property
    def s_index(self) -> int:
        return self.frame.s_index

    @property
    def point(self) -> np.ndarray:
        return self.frame.point

    @property
    def eta(self) -> SizeLedger:
        return self.p_s.min(self.p_u)

    def chart(self, eta: SizeLedger | None = None) -> PesinChart:
        return PesinChart(self.frame, self.q_eps, self.eta if eta is None else eta)

    def ident(self) -> tuple:
        if self.key:
            return self.key
        return (tuple(np.round(self.point, 15).tolist()), self.q_eps.ell, self.p_s.ell, self.p_u.ell)

    def with_sizes(self, p_s: SizeLedger, p_u: SizeLedger) -> "DoubleChart":
        key = self.key[:3] + (p_s.ell, p_u.ell) if self.key else ()
        return DoubleChart(self.frame, self.q_eps, p_s, p_u, key)

    def __repr__(self):
        return (f"DoubleChart(point={np.round(self.point, 12).tolist()}, lQ={self.q_eps.ell}, "
                f"ls={self.p_s.ell}, lu={self.p_u.ell})")


def stationary_chart(system: SmoothSystem, point, chi: float, epsilon: float,
                     constants: ChartConstants = PRACTICAL, window: int = 64) -> DoubleChart:
    """Saturated double chart p^s = p^u = Q_eps at a point (fixed points give self-edges)."""
    frame = chart_frames(system, np.asarray(point, dtype=float)[None], chi, window)[0]
    q = q_size(frame, epsilon, system.beta, constants)
    return DoubleChart(frame, q, q, q)


class FrameCache:
    """Frames keyed by the exact coordinates of their base point."""

    def __init__(self, system: SmoothSystem, chi: float, window: int = 64, tol: float = 1e-14):
        self.system, self.chi, self.window, self.tol = system, chi, window, tol
        self._store: dict[bytes, ChartFrame] = {}

    def get_many(self, points) -> list[ChartFrame]:
        pts = wrap(np.atleast_2d(np.asarray(points, dtype=float))) + 0.0   # -0.0 -> 0.0 for the byte keys
        keys = [p.tobytes() for p in pts]
        missing = {}
        for k, p in zip(keys, pts):
            if k not in self._store and k not in missing:
                missing[k] = p
        if missing:
            frames = chart_frames(self.system, np.array(list(missing.values())), self.chi, self.window, self.tol)
            self._store.update(zip(missing.keys(), frames))
        return [self._store[k] for k in keys]

    def get(self, point) -> ChartFrame:
        return self.get_many(point)[0]

    def __len__(self):
        return len(self._store)


@dataclass(frozen=True)
class EdgeReport:
    ok: bool
    clauses: dict

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.clauses.items() if not v]

    def __bool__(self):
        return self.ok


def edge_test(system: SmoothSystem, v: DoubleChart, w: DoubleChart, constants: ChartConstants = PRACTICAL,
              cache: FrameCache | None = None) -> EdgeReport:
    """The four clauses of the edge relation v -> w."""
    if v.p_s.epsilon != w.p_s.epsilon or v.frame.chi != w.frame.chi:
        raise ValueError("vertices must share epsilon and chi")
    clauses = {}
    clauses["s_index"] = v.s_index == w.s_index
    lu = max(v.p_u.ell - 3, w.q_eps.ell)
    ls = max(w.p_s.ell - 3, v.q_eps.ell)
    clauses["ledger_u"] = w.p_u.ell == lu
    clauses["ledger_s"] = v.p_s.ell == ls
    if clauses["s_index"]:
        cache = FrameCache(system, v.frame.chi, v.frame.window, v.frame.tol) if cache is None else cache
        f_x, finv_y = cache.get_many(np.stack([system.map(v.point), system.inverse_map(w.point)]))
        eta_v, eta_w = v.eta, w.eta
        clauses["overlap_source"] = bool(overlap_test(v.chart(eta_v), PesinChart(finv_y, v.q_eps, eta_v), constants))
        clauses["overlap_target"] = bool(overlap_test(PesinChart(f_x, w.q_eps, eta_w), w.chart(eta_w), constants))
    else:
        clauses["overlap_source"] = clauses["overlap_target"] = False
    return EdgeReport(all(clauses.values()), clauses)


def subordinate_fill(q_big: Sequence[SizeLedger], q_small: Sequence[SizeLedger]):
    """epsilon-subordinated (p^s, p^u) with p^s wedge p^u >= q, started at q on both ends."""
    n = len(q_big)
    if n != len(q_small) or n == 0:
        raise InfeasibleInput("sequences must be nonempty and of equal length")
    lq = [q.ell for q in q_big]
    ls_ = [q.ell for q in q_small]
    eps = q_big[0].epsilon
    for k in range(n):
        if ls_[k] < lq[k]:
            raise InfeasibleInput(f"q exceeds Q at index {k}")
        if k + 1 < n and abs(ls_[k] - ls_[k + 1]) > 3:
            raise InfeasibleInput(f"q ratio outside exp(+-eps) between {k} and {k + 1}")
    pu = [0] * n
    ps = [0] * n
    pu[0] = ls_[0]
    for k in range(n - 1):
        pu[k + 1] = max(pu[k] - 3, lq[k + 1])
    ps[-1] = ls_[-1]
    for k in range(n - 1, 0, -1):
        ps[k - 1] = max(ps[k] - 3, lq[k - 1])
    assert all(max(ps[k], pu[k]) <= ls_[k] for k in range(n))
    return [SizeLedger(e, eps) for e in ps], [SizeLedger(e, eps) for e in pu]


def saturation_report(q_big, p_s, p_u) -> dict:
    """Indices in each half where p^u (resp. p^s) equals Q."""
    n = len(q_big)
    c = n // 2
    hit_u = [k for k in range(n) if p_u[k].ell == q_big[k].ell]
    hit_s = [k for k in range(n) if p_s[k].ell == q_big[k].ell]
    return {"u_past": any(k < c for k in hit_u), "u_future": any(k > c for k in hit_u),
            "s_past": any(k < c for k in hit_s), "s_future": any(k > c for k in hit_s)}


@dataclass
class AlphabetCell:
    key: tuple                 # (position cell, frame cell, ell(Q))
    center: np.ndarray
    frame: ChartFrame
    q_eps: SizeLedger


class Alphabet:
    """Quantized (x, C_chi(x), Q_eps(x)) cells of visited points.

    Each cell admits the ledger pairs ell(Q) <= ell_s, ell_u <= ell(Q) + span.
    """

    def __init__(self, system: SmoothSystem, epsilon: float, chi: float, delta_x: float, delta_c: float,
                 offset, constants: ChartConstants = PRACTICAL, span: int = 240, window: int = 64):
        self.system, self.epsilon, self.chi = system, epsilon, chi
        self.delta_x, self.delta_c = delta_x, delta_c
        self.offset = np.asarray(offset, dtype=float)
        self.constants, self.span, self.window = constants, span, window
        self.cells: dict[tuple, AlphabetCell] = {}
        self.frames = FrameCache(system, chi, window)
        self._by_pos: dict[tuple, tuple] = {}
        self._vertices: dict[tuple, DoubleChart] = {}

    def pos_key(self, x) -> tuple:
        return tuple(int(v) for v in np.floor(wrap(np.asarray(x, dtype=float) - self.offset) / self.delta_x))

    def pos_center(self, key: tuple) -> np.ndarray:
        return wrap(self.offset + (np.asarray(key, dtype=float) + 0.5) * self.delta_x)

    def add_points(self, points) -> list[AlphabetCell]:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pkeys = [self.pos_key(p) for p in pts]
        new = sorted({k for k in pkeys if k not in self._by_pos})
        if new:
            centers = np.array([self.pos_center(k) for k in new])
            frames = self.frames.get_many(centers)
            for k, c, fr in zip(new, centers, frames):
                q = q_size(fr, self.epsilon, self.system.beta, self.constants)
                fkey = tuple(int(v) for v in np.round(fr.c_matrix.ravel() / self.delta_c))
                key = (k, fkey, q.ell)
                self.cells[key] = AlphabetCell(key, c, fr, q)
                self._by_pos[k] = key
        return [self.cells[self._by_pos[k]] for k in pkeys]

    def vertex(self, cell: AlphabetCell, ell_s: int, ell_u: int) -> DoubleChart:
        lq = cell.q_eps.ell
        if not (lq <= ell_s <= lq + self.span and lq <= ell_u <= lq + self.span):
            raise NoVertexFound(f"ledger pair ({ell_s}, {ell_u}) not admitted in cell with ell(Q)={lq}")
        key = cell.key + (ell_s, ell_u)
        v = self._vertices.get(key)
        if v is None:
            eps = self.epsilon
            v = DoubleChart(cell.frame, cell.q_eps, SizeLedger(ell_s, eps), SizeLedger(ell_u, eps), key)
            self._vertices[key] = v
        return v

    def census(self, threshold: SizeLedger) -> int:
        """#{admitted vertices with p^s wedge p^u > threshold}, counted arithmetically."""
        total = 0
        for cell in self.cells.values():
            m = min(max(threshold.ell - cell.q_eps.ell, 0), self.span + 1)
            total += m * m
        return total

    def census_table(self, thresholds: Iterable[SizeLedger]) -> list[tuple[int, int]]:
        return [(t.ell, self.census(t)) for t in thresholds]

    def header(self) -> dict:
        return {"delta_x": self.delta_x, "delta_c": self.delta_c, "offset": self.offset.tolist(),
                "span": self.span, "cells": len(self.cells)}


def build_alphabet(system: SmoothSystem, samples, epsilon: float, chi: float, delta_x: float = 1e-8,
                   delta_c: float = 1e-8, rng: np.random.Generator | None = None,
                   constants: ChartConstants = PRACTICAL, span: int = 240, window: int = 64) -> Alphabet:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise EmptyAlphabet("no orbit samples")
    rng = rng or np.random.default_rng(0)
    offset = rng.uniform(0.0, delta_x, system.dim)
    alph = Alphabet(system, epsilon, chi, delta_x, delta_c, offset, constants, span, window)
    alph.add_points(samples)
    if not alph.cells:
        raise EmptyAlphabet("alphabet is empty")
    return alph


def census_bound(alph: Alphabet, v: DoubleChart) -> int:
    """Vertices whose sizes are at least exp(-eps^{1/3}) (p^s wedge p^u) of v."""
    eps = alph.epsilon
    steps = math.floor(3.0 * eps ** (1.0 / 3.0) / eps)
    return alph.census(SizeLedger(v.eta.ell + steps + 1, eps))


@dataclass
class Chain:
    """Finite window of a chain; index i lives at position center + i."""

    vertices: list
    center: int
    points: np.ndarray | None = field(default=None, repr=False)   # shadowed orbit, same indexing

    @property
    def lo(self) -> int:
        return -self.center

    @property
    def hi(self) -> int:
        return len(self.vertices) - 1 - self.center

    def __getitem__(self, i: int) -> DoubleChart:
        if not self.lo <= i <= self.hi:
            raise IndexError(i)
        return self.vertices[self.center + i]

    def shift(self, k: int = 1) -> "Chain":
        return Chain(self.vertices, self.center + k, self.points)

    def window(self, n: int) -> list:
        return [self[i] for i in range(-n, n + 1)]

    def keys(self) -> list:
        return [v.ident() for v in self.vertices]

    def validate(self, system: SmoothSystem, constants: ChartConstants = PRACTICAL,
                 cache: FrameCache | None = None) -> list[int]:
        """Indices i whose edge (i, i+1) fails."""
        cache = FrameCache(system, self.vertices[0].frame.chi) if cache is None else cache
        pts = []
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            pts += [system.map(a.point), system.inverse_map(b.point)]
        if pts:
            cache.get_many(np.array(pts))
        return [i for i in range(self.lo, self.hi) if not edge_test(system, self[i], self[i + 1], constants, cache)]

    def recurrence_tags(self) -> dict | None:
        """A vertex repeated at least twice in each half-window, or None."""
        out = {}
        for name, idx in (("past", range(self.lo, 0)), ("future", range(1, self.hi + 1))):
            seen: dict[tuple, list[int]] = {}
            for i in idx:
                seen.setdefault(self[i].ident(), []).append(i)
            rep = [(k, v) for k, v in seen.items() if len(v) >= 2]
            if not rep:
                return None
            k, v = min(rep, key=lambda kv: kv[1][0] if name == "future" else -kv[1][-1])
            out[name] = (k, v)
        return out

    def ledger_ratio_ok(self) -> bool:
        etas = [v.eta.ell for v in self.vertices]
        return all(abs(a - b) <= 3 for a, b in zip(etas[:-1], etas[1:]))

    def to_json(self, ids: dict | None = None) -> dict:
        rows = []
        for i in range(self.lo, self.hi + 1):
            v = self[i]
            rows.append({"index": i, "id": ids.get(v.ident()) if ids else None,
                         "point": v.point.tolist(), "ell_q": v.q_eps.ell, "ell_s": v.p_s.ell, "ell_u": v.p_u.ell})
        return {"center": self.center, "vertices": rows}


def orbit_segment(system: SmoothSystem, x0, lo: int, hi: int) -> np.ndarray:
    """Points f^k(x0) for k = lo..hi (lo <= 0 <= hi)."""
    x0 = wrap(np.asarray(x0, dtype=float))
    back = [x0]
    for _ in range(-lo):
        back.append(system.inverse_map(back[-1]))
    fwd = [x0]
    for _ in range(hi):
        fwd.append(system.map(fwd[-1]))
    return np.array(back[::-1] + fwd[1:])


def orbit_to_chain(system: SmoothSystem, alph: Alphabet, orbit_pts, center: int, n: int,
                   lead: int = 60, half_window: int = 32, constants: ChartConstants | None = None,
                   validate: bool = True) -> Chain:
    """Chain of alphabet vertices over [-n, n] shadowing the orbit segment.

    ``orbit_pts`` must cover indices center-n-lead-half_window ..
    center+n+lead+half_window.  Sizes come from subordinate_fill of the
    tempered minorant over the extended range and are cropped to [-n, n].
    """
    constants = constants or alph.constants
    orbit_pts = np.atleast_2d(np.asarray(orbit_pts, dtype=float))
    ext = n + lead
    lo, hi = center - ext - half_window, center + ext + half_window
    if lo < 0 or hi >= len(orbit_pts):
        raise ValueError("orbit segment too short for the requested window")
    seg = orbit_pts[lo:hi + 1]
    beta = system.beta
    eps = alph.epsilon
    frames = alph.frames.get_many(seg)
    inner = slice(half_window + lead, half_window + lead + 2 * n + 1)
    cells = alph.add_points(seg[inner])
    q_big = [q_size(fr, eps, beta, constants) for fr in frames]
    for j, cell in enumerate(cells):
        q_big[half_window + lead + j] = cell.q_eps
    temp = tempered_size(q_big, eps, half_window)
    q_ext = q_big[half_window:half_window + len(temp.sizes)]
    q_small = [s if s.ell >= qb.ell else qb for s, qb in zip(temp.sizes, q_ext)]
    p_s, p_u = subordinate_fill(q_ext, q_small)
    p_s, p_u = p_s[lead:lead + 2 * n + 1], p_u[lead:lead + 2 * n + 1]
    verts = []
    for k, cell in enumerate(cells):
        v = alph.vertex(cell, p_s[k].ell, p_u[k].ell)
        own = PesinChart(frames[half_window + lead + k], q_big[half_window + lead + k], v.eta)
        if not overlap_test(v.chart(), own, constants):
            raise NoVertexFound(f"no alphabet vertex overlaps the orbit chart at index {k - n}", k - n)
        verts.append(v)
    chain = Chain(verts, n, seg[inner].copy())
    if validate:
        bad = chain.validate(system, constants, alph.frames)
        if bad:
            raise NoVertexFound(f"edge relation fails at index {bad[0]}", bad[0])
    return chain


def periodic_points(system: SmoothSystem, period: int, count: int, rng: np.random.Generator,
                    max_tries: int = 200) -> list[np.ndarray]:
    """Points of minimal period ``period``, one per orbit.

    Linear systems: exact solutions of (A^P - I) p in Z^d.  Perturbed
    systems: Newton continuation from the linear part's periodic points.
    """
    lin = system.linear_part
    if lin is None:
        raise ValueError("periodic point search needs a linear part")
    d = system.dim
    mp = np.linalg.matrix_power(lin, period) - np.eye(d)
    det = int(round(abs(np.linalg.det(mp))))
    if det == 0:
        raise ValueError("A^P - I is singular")
    inv = np.linalg.inv(mp)
    found: list[np.ndarray] = []
    orbits_seen: list[np.ndarray] = []
    for _ in range(max_tries):
        if len(found) >= count:
            break
        m = rng.integers(-det, det + 1, size=d)
        p = wrap(inv @ m)
        if not system.is_linear:
            p = periodic_orbit_newton(system, p, period)
        orb = _orbit_of(system, p, period)
        if _minimal_period(orb) != period:
            continue
        if any(np.min(np.linalg.norm(torus_delta(orb, q[None]), axis=-1)) < 1e-9 for q in orbits_seen):
            continue
        orbits_seen.append(orb[0])
        found.append(orb[0])
    return found


def _orbit_of(system, p, period):
    pts = [p]
    for _ in range(period - 1):
        pts.append(system.map(pts[-1]))
    return np.array(pts)


def _minimal_period(orb) -> int:
    for k in range(1, len(orb)):
        if np.linalg.norm(torus_delta(orb[k], orb[0])) < 1e-9:
            return k
    return len(orb)


def periodic_orbit_newton(system: SmoothSystem, x, period: int, steps: int = 50) -> np.ndarray:
    x = wrap(np.asarray(x, dtype=float))
    for _ in range(steps):
        y = x
        for _ in range(period):
            y = system.map(y)
        r = torus_delta(y, x)
        if np.max(np.abs(r)) < 1e-15:
            return x
        jac = cocycle(system, x, period) - np.eye(system.dim)
        x = wrap(x - np.linalg.solve(jac, r))
    y = x
    for _ in range(period):
        y = system.map(y)
    if np.max(np.abs(torus_delta(y, x))) > 1e-12:
        raise NoConvergence("periodic orbit Newton iteration failed")
    return x


def periodic_orbit(system: SmoothSystem, x, period: int, lo: int, hi: int) -> np.ndarray:
    """Orbit segment of a periodic point indexed lo..hi, reusing the period (no error growth)."""
    orb = _orbit_of(system, wrap(np.asarray(x, dtype=float)), period)
    return np.array([orb[k % period] for k in range(lo, hi + 1)])


def _linear_subspaces(lin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real bases of the contracting and expanding subspaces of a hyperbolic matrix."""
    t, z, sdim = schur(lin, output="real", sort=lambda re, im: re * re + im * im < 1.0)
    es = z[:, :sdim]
    t2, z2, udim = schur(lin, output="real", sort=lambda re, im: re * re + im * im > 1.0)
    return es, z2[:, :udim]


def homoclinic_orbit(system: SmoothSystem, p, m, half: int = 30, steps: int = 30) -> np.ndarray:
    """Orbit z_{-half..half} homoclinic to the fixed point p, started from the linear guess for translation m.

    The guess solves p + E_u t = p + E_s s + m for the linear part; Newton on
    the shooting equations f(z_k) = z_{k+1} with z_{-half} on the unstable and
    z_{half} on the stable subspace of d_p f then polishes it.
    """
    lin = system.linear_part
    if lin is None:
        raise ValueError("homoclinic search needs a linear part")
    p = wrap(np.asarray(p, dtype=float))
    if np.max(np.abs(torus_delta(system.map(p), p))) > 1e-12:
        raise ValueError("p is not a fixed point")
    d = system.dim
    es, eu = _linear_subspaces(lin)
    ts = np.linalg.solve(np.hstack([eu, -es]), np.asarray(m, dtype=float))
    vu, vs = eu @ ts[:eu.shape[1]], es @ ts[eu.shape[1]:]
    inv = np.linalg.inv(lin)
    lifts = []
    for k in range(-half, half + 1):
        vec = np.linalg.matrix_power(inv, -k) @ vu if k <= 0 else np.linalg.matrix_power(lin, k) @ vs
        lifts.append(vec)
    z = np.array(lifts)                       # displacements from p on the lift
    ps_es, ps_eu = _linear_subspaces(system.differential(p))
    proj = np.linalg.inv(np.hstack([ps_es, ps_eu]))
    ns = ps_es.shape[1]
    n = 2 * half + 1
    for _ in range(steps):
        pts = wrap(p + z)
        res = [torus_delta(system.map(pts[k]), pts[k + 1]) for k in range(n - 1)]
        bc = np.concatenate([(proj @ z[0])[:ns], (proj @ z[-1])[ns:]])
        r = np.concatenate(res + [bc])
        if np.max(np.abs(r)) < 1e-15:
            break
        jac = np.zeros(((n - 1) * d + d, n * d))
        for k in range(n - 1):
            jac[k * d:(k + 1) * d, k * d:(k + 1) * d] = system.differential(pts[k])
            jac[k * d:(k + 1) * d, (k + 1) * d:(k + 2) * d] = -np.eye(d)
        jac[(n - 1) * d:(n - 1) * d + ns, :d] = proj[:ns]
        jac[(n - 1) * d + ns:, (n - 1) * d:] = proj[ns:]
        z = z - np.linalg.solve(jac, r).reshape(n, d)
    pts = wrap(p + z)
    worst = max(float(np.max(np.abs(torus_delta(system.map(pts[k]), pts[k + 1])))) for k in range(n - 1))
    if worst > 1e-12:
        raise NoConvergence(f"homoclinic shooting residual {worst:.2e}")
    return pts


def homoclinic_segment(system: SmoothSystem, p, orbit: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Pseudo-orbit indexed lo..hi: the homoclinic excursion, padded with the fixed point."""
    half = (len(orbit) - 1) // 2
    p = wrap(np.asarray(p, dtype=float))
    return np.array([orbit[k + half] if -half <= k <= half else p for k in range(lo, hi + 1)])


class ChartGraph:
    def __init__(self, epsilon: float, meta: dict | None = None):
        self.epsilon = epsilon
        self.vertices: dict[tuple, DoubleChart] = {}
        self.edges: dict[tuple, set] = {}
        self.meta = meta or {}

    def add_vertex(self, v: DoubleChart):
        k = v.ident()
        self.vertices.setdefault(k, v)
        self.edges.setdefault(k, set())

    def add_edge(self, v: DoubleChart, w: DoubleChart):
        self.add_vertex(v)
        self.add_vertex(w)
        self.edges[v.ident()].add(w.ident())

    def sorted_keys(self) -> list:
        return sorted(self.vertices)

    def in_degree(self) -> dict:
        deg = {k: 0 for k in self.vertices}
        for k, outs in self.edges.items():
            for o in outs:
                deg[o] += 1
        return deg

    def out_degree(self) -> dict:
        return {k: len(self.edges[k]) for k in self.vertices}

    def n_edges(self) -> int:
        return sum(len(v) for v in self.edges.values())


def prune(graph: ChartGraph) -> ChartGraph:
    """Repeatedly drop vertices with no incoming or no outgoing edge."""
    while True:
        ind, outd = graph.in_degree(), graph.out_degree()
        dead = {k for k in graph.vertices if ind[k] == 0 or outd[k] == 0}
        if not dead:
            return graph
        for k in dead:
            del graph.vertices[k]
            del graph.edges[k]
        for k in graph.edges:
            graph.edges[k] -= dead


def build_graph(system: SmoothSystem, chains: Sequence[Chain], constants: ChartConstants = PRACTICAL,
                cache: FrameCache | None = None, extra_edges: bool = True, do_prune: bool = True) -> ChartGraph:
    """Graph on the vertices visited by the chains.

    Chain edges are included; with ``extra_edges`` every pair of visited
    vertices whose centers are close after one step is tested as well.
    """
    if not chains:
        return ChartGraph(0.1)
    eps = chains[0].vertices[0].p_s.epsilon
    graph = ChartGraph(eps, {"constants": constants.header()})
    for ch in chains:
        for a, b in zip(ch.vertices[:-1], ch.vertices[1:]):
            graph.add_edge(a, b)
    if extra_edges and len(graph.vertices) > 1:
        keys = graph.sorted_keys()
        verts = [graph.vertices[k] for k in keys]
        pts = np.array([v.point for v in verts])
        # threshold scale: largest admissible overlap radius
        radius = max(math.exp(constants.log_overlap_threshold(v.eta.log_value, v.eta.log_value)) for v in verts)
        cell = max(radius, 1e-15)
        table: dict[tuple, list[int]] = {}
        for i, p in enumerate(pts):
            table.setdefault(tuple(np.floor(p / cell).astype(int)), []).append(i)
        images = system.map(pts)
        cache = FrameCache(system, verts[0].frame.chi) if cache is None else cache
        for i, y in enumerate(images):
            base = np.floor(y / cell).astype(int)
            cand = set()
            for off in np.ndindex(*([3] * system.dim)):
                cand.update(table.get(tuple(base + np.array(off) - 1), []))
            for j in sorted(cand):
                if keys[j] in graph.edges[keys[i]]:
                    continue
                if edge_test(system, verts[i], verts[j], constants, cache):
                    graph.edges[keys[i]].add(keys[j])
    return prune(graph) if do_prune else graph


def graph_export(graph: ChartGraph, fmt: str = "json", header: dict | None = None) -> str:
    keys = graph.sorted_keys()
    ids = {k: i for i, k in enumerate(keys)}
    header = dict(header or {})
    if fmt == "dot":
        lines = [f"// {k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(header.items())]
        lines.append("digraph chart_graph {")
        for k in keys:
            v = graph.vertices[k]
            lines.append(f'  v{ids[k]} [label="v{ids[k]}\\nlQ={v.q_eps.ell} ls={v.p_s.ell} lu={v.p_u.ell}"];')
        for k in keys:
            for o in sorted(graph.edges[k]):
                lines.append(f"  v{ids[k]} -> v{ids[o]};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    if fmt != "json":
        raise ValueError("format must be dot or json")
    verts = []
    for k in keys:
        v = graph.vertices[k]
        fr = v.frame
        verts.append({"id": ids[k], "key": _jsonable(k), "point": fr.point.tolist(), "s_index": fr.s_index,
                      "ell_q": v.q_eps.ell, "ell_s": v.p_s.ell, "ell_u": v.p_u.ell,
                      "c_matrix": fr.c_matrix.tolist(), "c_inv_norm": fr.c_inv_norm})
    edges = [[ids[k], ids[o]] for k in keys for o in sorted(graph.edges[k])]
    doc = {"meta": header, "epsilon": graph.epsilon, "vertices": verts, "edges": edges}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _jsonable(key):
    if isinstance(key, tuple):
        return [_jsonable(k) for k in key]
    return key


def _tuplify(obj):
    if isinstance(obj, list):
        return tuple(_tuplify(o) for o in obj)
    return obj


def graph_from_json(text: str, chi: float) -> ChartGraph:
    """Rebuild a graph from its JSON export (frames reduced to the exported matrices)."""
    doc = json.loads(text)
    eps = doc["epsilon"]
    graph = ChartGraph(eps, doc.get("meta", {}))
    by_id = {}
    for row in doc["vertices"]:
        c = np.array(row["c_matrix"], dtype=float)
        d = c.shape[0]
        z = np.zeros((d, 0))
        fr = ChartFrame(np.array(row["point"]), chi, c, np.linalg.inv(c), row["c_inv_norm"], row["s_index"],
                        0.0, 0, z, z, z, z)
        v = DoubleChart(fr, SizeLedger(row["ell_q"], eps), SizeLedger(row["ell_s"], eps),
                        SizeLedger(row["ell_u"], eps), _tuplify(row["key"]))
        graph.add_vertex(v)
        by_id[row["id"]] = v
    for a, b in doc["edges"]:
        graph.add_edge(by_id[a], by_id[b])
    return graph
