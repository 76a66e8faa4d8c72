"""Coding map chain -> point, its diagnostics and the inverse-problem checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import polar
from scipy.stats import ortho_group

from .chains import Alphabet, Chain, ChartConstants, DoubleChart, orbit_segment
from .errors import NoConvergence, NotSameOrbit, SplicingImpossible
from .manifolds import (AdmissibleManifold, DEFAULT_GRID, IntersectionResult, intersect, local_manifold,
                        manifold_dist, manifold_dist_c1)
from .system import SmoothSystem, distance, torus_delta, wrap

__all__ = [
    "CodedPoint", "code_point", "equivariance_defect", "splice_chain", "hoelder_modulus",
    "fit_decay", "InverseRecord", "inverse_diagnostics", "orthogonal_net", "net_snap", "net_distance",
    "box_confinement_point",
]


@dataclass(frozen=True)
class CodedPoint:
    point: np.ndarray
    chain: Chain
    vs: AdmissibleManifold = field(repr=False)
    vu: AdmissibleManifold = field(repr=False)
    residual: float
    coords: np.ndarray
    in_box: bool

    @property
    def vertex(self) -> DoubleChart:
        return self.chain[0]


def code_point(system: SmoothSystem, chain: Chain, iters: int = 20, tol: float = 1e-14,
               grid_res: int = DEFAULT_GRID) -> CodedPoint:
    """Intersection of the u-manifold of the past with the s-manifold of the future."""
    if chain.lo > -iters or chain.hi < iters:
        raise ValueError(f"chain window [{chain.lo}, {chain.hi}] shorter than iters={iters}")
    win = [chain[i] for i in range(-iters, iters + 1)]
    vu = local_manifold(system, win, "u", iters, grid_res=grid_res).manifold
    vs = local_manifold(system, win, "s", iters, grid_res=grid_res).manifold
    res: IntersectionResult = intersect(vu, vs, tol)
    return CodedPoint(res.point, chain, vs, vu, res.residual, res.coords, res.in_box)


def equivariance_defect(system: SmoothSystem, coded: CodedPoint, iters: int = 20,
                        shifted: CodedPoint | None = None) -> float:
    """d(pi(sigma v), f(pi(v)))."""
    shifted = shifted or code_point(system, coded.chain.shift(1), iters, grid_res=coded.vu.repr.n)
    return float(distance(shifted.point, system.map(coded.point)))


def splice_chain(system: SmoothSystem, alph: Alphabet, chain: Chain, n: int, rng: np.random.Generator | None = None,
                 constants: ChartConstants | None = None, offset: float = 0.05) -> Chain:
    """Chain equal to ``chain`` on indices >= -n with a different past.

    The past is the backward orbit of a point z in the cell of chain[-n], so
    the two chains share that vertex.  Without ``rng``, z is the shadowed
    orbit point moved by offset * delta_x along the contracting direction of
    the chart; the splices for different n are then directly comparable.
    """
    constants = constants or alph.constants
    anchor = chain[-n]
    depth = n - chain.lo                  # indices chain.lo .. -n-1 get replaced
    if depth <= n:
        raise SplicingImpossible("not enough past to splice")
    z = None
    if rng is None:
        e = anchor.frame.c_matrix[:, 0]
        base = chain.points[chain.center - n] if chain.points is not None else anchor.point
        for sign in (1.0, -1.0):
            cand = wrap(base + sign * offset * alph.delta_x * e / np.max(np.abs(e)))
            if alph.pos_key(cand) == alph.pos_key(anchor.point):
                z = cand
                break
    else:
        for _ in range(100):
            cand = wrap(anchor.point + rng.uniform(-offset, offset, system.dim) * alph.delta_x)
            if alph.pos_key(cand) == alph.pos_key(anchor.point):
                z = cand
                break
    if z is None:
        raise SplicingImpossible("could not place a point in the shared cell")
    lead = 60
    steps = (-n - chain.lo) + lead
    back = orbit_segment(system, z, -steps, 0)[:-1]          # f^{-steps}(z) .. f^{-1}(z)
    cells = alph.add_points(back)
    q_back = [c.q_eps for c in cells]
    q_all = q_back + [v.q_eps for v in chain.vertices[chain.center - n:]]
    ell_ps = [v.p_s.ell for v in chain.vertices[chain.center - n:]]
    # backward s-pass continues from the shared part, forward u-pass starts saturated
    ps = [0] * len(q_back) + ell_ps
    for k in range(len(q_back) - 1, -1, -1):
        ps[k] = max(ps[k + 1] - 3, q_all[k].ell)
    pu = [0] * len(q_all)
    pu[0] = q_all[0].ell
    for k in range(len(q_all) - 1):
        pu[k + 1] = max(pu[k] - 3, q_all[k + 1].ell)
    shared = chain.vertices[chain.center - n:]
    for j, v in enumerate(shared):
        if pu[len(q_back) + j] != v.p_u.ell:
            raise SplicingImpossible(f"unstable sizes disagree at index {-n + j}")
    new_past = [alph.vertex(c, ps[k], pu[k]) for k, c in enumerate(cells)][lead:]
    verts = new_past + list(shared)
    out = Chain(verts, chain.center, None)
    bad = out.validate(system, constants, alph.frames)
    if bad:
        raise SplicingImpossible(f"spliced chain fails the edge relation at index {bad[0]}")
    return out


def hoelder_modulus(system: SmoothSystem, chain1: Chain, chain2_by_n: dict, iters: int = 20,
                    grid_res: int = DEFAULT_GRID) -> list[dict]:
    """dist of V^u of the past between chain1 and chains agreeing on [-n, 0]."""
    win1 = [chain1[i] for i in range(-iters, iters + 1)]
    vu1 = local_manifold(system, win1, "u", iters, grid_res=grid_res).manifold
    rows = []
    for n in sorted(chain2_by_n):
        ch2 = chain2_by_n[n]
        win2 = [ch2[i] for i in range(-iters, iters + 1)]
        vu2 = local_manifold(system, win2, "u", iters, grid_res=grid_res).manifold
        rows.append({"n": n, "c0": manifold_dist(vu1, vu2), "c1": manifold_dist_c1(vu1, vu2)})
    return rows


def fit_decay(rows: list[dict], key: str = "c0") -> float:
    """Least-squares decay factor theta with dist(n) ~ C theta^n."""
    ns = np.array([r["n"] for r in rows if r[key] > 0], dtype=float)
    vals = np.array([r[key] for r in rows if r[key] > 0])
    if len(ns) < 2:
        return 0.0
    slope = np.polyfit(ns, np.log(vals), 1)[0]
    return float(math.exp(slope))


@dataclass(frozen=True)
class InverseRecord:
    index: int
    distance: float
    distance_bound: float
    ell_s_diff: int
    ell_u_diff: int
    ell_bound: int
    r_minus_id: float
    r_bound: float
    translation: float
    translation_bound: float
    remainder_derivative: float
    remainder_bound: float
    frame_ratio: float
    frame_bound: float
    snap_distance: float

    @property
    def flags(self) -> dict:
        return {
            "distance": self.distance < self.distance_bound,
            "ledger": max(self.ell_s_diff, self.ell_u_diff) <= self.ell_bound,
            "r_minus_id": self.r_minus_id <= self.r_bound,
            "translation": self.translation <= self.translation_bound,
            "remainder": self.remainder_derivative < self.remainder_bound,
            "frame_ratio": abs(math.log(self.frame_ratio)) <= self.frame_bound,
        }

    @property
    def ok(self) -> bool:
        return all(self.flags.values())


def _op_same_component(diff: np.ndarray, d: int) -> np.ndarray:
    # for d <= 3, X - Y with X, Y in one component of O(d) has two equal top singular values
    # (or rank <= 2), so the Frobenius norm over sqrt(2) is the operator norm
    fro = np.sqrt(np.sum(diff * diff, axis=(-2, -1)))
    return fro / math.sqrt(2.0) if d <= 3 else fro


def orthogonal_net(d: int, radius: float, rng: np.random.Generator, pool: int = 20000,
                   margin: float = 0.85) -> np.ndarray:
    """Greedy farthest-point net of O(d) with covering radius about margin*radius (operator norm)."""
    out = []
    for sign in (1.0, -1.0):
        cand = ortho_group.rvs(d, size=pool, random_state=rng)
        if d == 1:
            cand = cand.reshape(-1, 1, 1)
        dets = np.linalg.det(cand)
        cand = cand[np.sign(dets) == sign]
        base = np.eye(d)
        if sign < 0:
            base[-1, -1] = -1.0
        cand = np.concatenate([base[None], cand])
        mind = _op_same_component(cand - base, d)
        chosen = [0]
        while True:
            j = int(np.argmax(mind))
            if mind[j] <= margin * radius:
                break
            chosen.append(j)
            mind = np.minimum(mind, _op_same_component(cand - cand[j], d))
        out.append(cand[chosen])
    return np.concatenate(out)


def net_distance(net: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """Exact operator-norm distance from each matrix to the net."""
    mats = np.atleast_3d(mats) if mats.ndim == 2 else mats
    if mats.ndim == 2:
        mats = mats[None]
    out = np.empty(len(mats))
    for i, m in enumerate(mats):
        out[i] = np.min(np.linalg.norm(net - m, 2, axis=(-2, -1)))
    return out


def net_snap(net: np.ndarray, o: np.ndarray) -> tuple[int, float]:
    dist = np.linalg.norm(net - o, 2, axis=(-2, -1))
    j = int(np.argmin(dist))
    return j, float(dist[j])


def inverse_diagnostics(system: SmoothSystem, chain1: Chain, chain2: Chain, point1=None, point2=None,
                        tol: float = 1e-8, net: np.ndarray | None = None, grid_res: int = 9,
                        indices=None) -> list[InverseRecord]:
    """Compare two chains coding the same point, index by index."""
    if point1 is not None and point2 is not None:
        gap = float(distance(point1, point2))
        if gap >= tol:
            raise NotSameOrbit(f"coded points differ by {gap:.3e}")
    v0 = chain1[0]
    eps = v0.p_s.epsilon
    d = system.dim
    ell_bound = math.ceil(3.0 * eps ** (-2.0 / 3.0))
    lo = max(chain1.lo, chain2.lo)
    hi = min(chain1.hi, chain2.hi)
    idx = range(lo, hi + 1) if indices is None else indices
    out = []
    for i in idx:
        a, b = chain1[i], chain2[i]
        fx, fy = a.frame, b.frame
        dist = float(distance(fx.point, fy.point))
        eta_a, eta_b = a.eta.value, b.eta.value
        m = fy.c_inverse @ fx.c_matrix
        o, r = polar(m, side="right")
        trans = fy.c_inverse @ torus_delta(fx.point, fy.point)
        # remainder of psi_y^{-1} psi_x - (O + a), differentiated on a grid of R_eps(0)
        h = 2 * eps / (grid_res - 1)
        axis = np.linspace(-eps, eps, grid_res)
        mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], -1)
        img = fy.c_inverse @ torus_delta(wrap(fx.point + mesh @ fx.c_matrix.T), fy.point).T
        delta = img.T - mesh @ o.T - trans
        grads = np.gradient(delta.reshape((grid_res,) * d + (d,)), h, axis=tuple(range(d)))
        jac = np.stack(grads, axis=-1).reshape(-1, d, d)
        dnorm = float(np.max(np.linalg.norm(jac, 2, axis=(-2, -1))))
        snap = net_snap(net, o)[1] if net is not None else float("nan")
        out.append(InverseRecord(
            i, dist, max(eta_a, eta_b) / 25.0,
            abs(a.p_s.ell - b.p_s.ell), abs(a.p_u.ell - b.p_u.ell), ell_bound,
            float(np.linalg.norm(r - np.eye(d), 2)), 8.0 * math.sqrt(eps),
            float(np.max(np.abs(trans))), 0.1 * eta_b,
            dnorm, 0.5 * eps ** (1.0 / 3.0),
            fx.c_inv_norm / fy.c_inv_norm, 5.0 * math.sqrt(eps), snap))
    return out


def box_confinement_point(system: SmoothSystem, chart: DoubleChart, t: float | np.ndarray, steps: int = 30,
                          kind: str = "s", box: float | None = None, bisections: int = 200) -> float:
    """Transversal coordinate of the point of W^s (or W^u) over t, found by bisection.

    Points whose first ``steps`` iterates stay in the chart boxes of a
    stationary chain are exactly those near the local manifold; points off it
    leave along the expanding coordinate with a definite sign.
    """
    from .charts import ChartTransition

    frame = chart.frame
    s = frame.s_index
    d = frame.dim
    box = chart.eta.value if box is None else box
    trans = ChartTransition.build(system, frame, frame, inverse=(kind == "u"))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    dom = slice(0, s) if kind == "s" else slice(s, d)
    val = slice(s, d) if kind == "s" else slice(0, s)
    if (d - s if kind == "s" else s) != 1:
        raise ValueError("bisection needs a one-dimensional transversal")

    def escape_sign(x):
        v = np.zeros(d)
        v[dom] = t
        v[val] = x
        for _ in range(steps):
            v = trans(v)
            if np.max(np.abs(v)) > box:
                return float(np.sign(v[val][0]))
        return 0.0

    lo, hi = -box, box
    s_lo = escape_sign(lo)
    if s_lo == 0.0 or escape_sign(hi) != -s_lo:
        raise NoConvergence("bisection bracket does not straddle the manifold")
    # the confined set is an interval of width ~ box * expansion^-steps; converge to its lower end
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if escape_sign(mid) == s_lo:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300):
            break
    return 0.5 * (lo + hi)
