"""Grid-sampled admissible manifolds and the graph transform.

A u-manifold in the chart at x is the graph {(F(t), t)} of F from the
unstable box [-q, q]^u to the stable coordinates; an s-manifold is
{(t, F(t))}.  Norms of matrices are sup-norm operator norms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .charts import ChartTransition, hoelder_seminorm, op_inf
from .errors import (AdmissibilityLost, DomainEscape, ImplicitSolveFailure, NoConvergence,
                     NotContractive)
from .system import SmoothSystem, torus_delta, wrap

if TYPE_CHECKING:
    from .chains import DoubleChart

__all__ = [
    "RepresentingFunction", "ManifoldParams", "AdmissibleManifold", "IntersectionResult",
    "TransformReport", "measure_params", "alpha_norm", "neumann_bound", "admissibility",
    "make_manifold", "intersect", "graph_transform", "graph_transform_u", "graph_transform_s",
    "local_manifold", "stays_in_windows_check", "manifold_dist", "manifold_dist_c1",
    "manifold_points", "contraction_trace",
]

DEFAULT_GRID = 33
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RepresentingFunction:
    kind: str
    radius: float
    values: np.ndarray = field(repr=False)   # shape (n,)*in_dim + (out_dim,)

    def __post_init__(self):
        if self.kind not in ("s", "u"):
            raise ValueError("kind must be 's' or 'u'")
        if self.n < 9:
            raise ValueError("need at least 9 nodes per axis")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def in_dim(self) -> int:
        return self.values.ndim - 1

    @property
    def out_dim(self) -> int:
        return self.values.shape[-1]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.n)

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.n - 1)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.in_dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.out_dim)

    @classmethod
    def from_function(cls, kind: str, radius: float, n: int, in_dim: int, fn: Callable) -> "RepresentingFunction":
        axis = np.linspace(-radius, radius, n)
        mesh = np.meshgrid(*([axis] * in_dim), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = np.asarray(fn(nodes), dtype=float)
        return cls(kind, radius, vals.reshape((n,) * in_dim + (vals.shape[-1],)))

    @classmethod
    def zero(cls, kind: str, radius: float, n: int, in_dim: int, out_dim: int) -> "RepresentingFunction":
        return cls(kind, radius, np.zeros((n,) * in_dim + (out_dim,)))

    def evaluate(self, t) -> tuple[np.ndarray, bool]:
        """Multilinear interpolation; out-of-box queries are clamped and flagged."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        outside = bool(np.any(np.abs(t) > self.radius * (1 + 1e-12)))
        t = np.clip(t, -self.radius, self.radius)
        if self.in_dim == 1:
            out = np.stack([np.interp(t[:, 0], self.axis, self.values[:, j]) for j in range(self.out_dim)], -1)
            return out, outside
        interp = RegularGridInterpolator((self.axis,) * self.in_dim, self.values, method="linear")
        return interp(t), outside

    def __call__(self, t) -> np.ndarray:
        out, outside = self.evaluate(t)
        if outside:
            raise DomainEscape("query outside the representing box")
        return out

    def jacobians(self) -> np.ndarray:
        """Finite-difference Jacobians at every node, shape (N, out_dim, in_dim)."""
        h = self.spacing
        grads = np.gradient(self.values, h, axis=tuple(range(self.in_dim)), edge_order=2)
        if self.in_dim == 1:
            grads = [grads]
        jac = np.stack(grads, axis=-1)
        return jac.reshape(-1, self.out_dim, self.in_dim)

    def center_jacobian(self) -> np.ndarray:
        jac = self.jacobians().reshape((self.n,) * self.in_dim + (self.out_dim, self.in_dim))
        mid = (self.n - 1) // 2
        if self.n % 2 == 1:
            return jac[(mid,) * self.in_dim]
        # even grids: average over the cell containing 0
        idx = np.ix_(*([[mid, mid + 1]] * self.in_dim))
        return jac[idx].reshape(-1, self.out_dim, self.in_dim).mean(axis=0)

    def at_origin(self) -> np.ndarray:
        return self.evaluate(np.zeros(self.in_dim))[0][0]

    def resample(self, radius: float, n: int | None = None) -> "RepresentingFunction":
        n = self.n if n is None else n
        if radius > self.radius * (1 + 1e-12):
            raise DomainEscape("resampling would extrapolate")
        return RepresentingFunction.from_function(self.kind, radius, n, self.in_dim,
                                                  lambda nodes: self.evaluate(nodes)[0])

    def to_json(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "n": self.n,
                "in_dim": self.in_dim, "out_dim": self.out_dim, "values": self.values.ravel().tolist()}


@dataclass(frozen=True)
class ManifoldParams:
    sigma: float
    gamma: float
    phi: float
    q: float

    def as_dict(self) -> dict:
        return {"sigma": self.sigma, "gamma": self.gamma, "phi": self.phi, "q": self.q}


def measure_params(repr_fn: RepresentingFunction, beta: float) -> ManifoldParams:
    jac = repr_fn.jacobians()
    sup = float(np.max(op_inf(jac))) if jac.size else 0.0
    hol = hoelder_seminorm(repr_fn.nodes(), jac, beta / 3.0, norm="inf")
    gamma = float(op_inf(repr_fn.center_jacobian()))
    phi = float(np.max(np.abs(repr_fn.at_origin())))
    return ManifoldParams(sup + hol, gamma, phi, repr_fn.radius)


def alpha_norm(field_values: np.ndarray, points: np.ndarray, alpha: float) -> float:
    """Sup of operator norms plus the alpha-Hoelder quotient of a matrix field."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    field_values = np.asarray(field_values, dtype=float)
    return float(np.max(op_inf(field_values))) + hoelder_seminorm(points, field_values, alpha, norm="inf")


def neumann_bound(norm_e: float) -> float:
    """Bound 1/(1 - ||E||_alpha) on ||(Id + E)^{-1}||_alpha."""
    if norm_e >= 1.0:
        raise NotContractive(f"||E||_alpha = {norm_e:.4g} is not below 1")
    return 1.0 / (1.0 - norm_e)


@dataclass(frozen=True)
class AdmissibleManifold:
    chart: "DoubleChart"
    repr: RepresentingFunction
    params: ManifoldParams
    beta: float = 1.0

    @property
    def kind(self) -> str:
        return self.repr.kind

    def chart_points(self, nodes: np.ndarray | None = None) -> np.ndarray:
        """Chart coordinates (stable block first) of the graph over the given nodes."""
        t = self.repr.nodes() if nodes is None else np.atleast_2d(nodes)
        vals = self.repr.evaluate(t)[0]
        return np.concatenate([vals, t], -1) if self.kind == "u" else np.concatenate([t, vals], -1)

    def to_json(self) -> dict:
        return {"repr": self.repr.to_json(), "params": self.params.as_dict(),
                "chart_point": self.chart.frame.point.tolist()}


def admissibility(man: AdmissibleManifold, epsilon: float | None = None) -> dict:
    """Admissibility clauses in the double chart, each with measured value and bound."""
    ch = man.chart
    eta = min(ch.p_s.value, ch.p_u.value)
    beta = man.beta
    q_expected = (ch.p_u if man.kind == "u" else ch.p_s).value
    p = man.params
    eps = ch.p_s.epsilon if epsilon is None else epsilon
    lip = float(np.max(op_inf(man.repr.jacobians())))
    sup = float(np.max(np.abs(man.repr.values)))
    out = {
        "sigma": (p.sigma, 0.5, p.sigma <= 0.5),
        "gamma": (p.gamma, 0.5 * eta ** (beta / 3), p.gamma <= 0.5 * eta ** (beta / 3)),
        "phi": (p.phi, 1e-3 * eta, p.phi <= 1e-3 * eta),
        "q": (p.q, q_expected, abs(p.q - q_expected) <= 1e-12 * q_expected),
        "sup_below_Q": (sup, ch.q_eps.value, sup <= ch.q_eps.value),
        "lipschitz": (lip, eps, lip < eps),
    }
    out["admissible"] = all(v[2] for k, v in out.items() if k in ("sigma", "gamma", "phi", "q"))
    return out


def make_manifold(chart: "DoubleChart", kind: str, fn: Callable | None = None,
                  grid_res: int = DEFAULT_GRID, beta: float = 1.0) -> AdmissibleManifold:
    """Graph of fn (zero section when None) over the box of the double chart."""
    s = chart.frame.s_index
    d = chart.frame.dim
    in_dim = d - s if kind == "u" else s
    radius = (chart.p_u if kind == "u" else chart.p_s).value
    if fn is None:
        rep = RepresentingFunction.zero(kind, radius, grid_res, in_dim, d - in_dim)
    else:
        rep = RepresentingFunction.from_function(kind, radius, grid_res, in_dim, fn)
    return AdmissibleManifold(chart, rep, measure_params(rep, beta), beta)


def manifold_points(system: SmoothSystem, man: AdmissibleManifold, nodes=None) -> np.ndarray:
    """Torus points of the manifold graph."""
    v = man.chart_points(nodes)
    return wrap(man.chart.frame.point + v @ man.chart.frame.c_matrix.T)


def _common(v1: RepresentingFunction, v2: RepresentingFunction):
    if v1.kind != v2.kind or v1.in_dim != v2.in_dim:
        raise ValueError("manifolds must have the same kind and dimension")
    if v1.radius == v2.radius and v1.n == v2.n:
        return v1, v2
    r = min(v1.radius, v2.radius)
    # radii may differ by at most one ledger step (factor below exp(eps/3) for eps < 1)
    if max(v1.radius, v2.radius) / r > math.exp(1.0 / 3.0):
        raise ValueError("radii too different to compare")
    n = max(v1.n, v2.n)
    return v1.resample(r, n), v2.resample(r, n)


def manifold_dist(v1, v2) -> float:
    r1 = v1.repr if isinstance(v1, AdmissibleManifold) else v1
    r2 = v2.repr if isinstance(v2, AdmissibleManifold) else v2
    a, b = _common(r1, r2)
    return float(np.max(np.abs(a.values - b.values)))


def manifold_dist_c1(v1, v2) -> float:
    r1 = v1.repr if isinstance(v1, AdmissibleManifold) else v1
    r2 = v2.repr if isinstance(v2, AdmissibleManifold) else v2
    a, b = _common(r1, r2)
    return float(np.max(np.abs(a.values - b.values)) + np.max(op_inf(a.jacobians() - b.jacobians())))


@dataclass(frozen=True)
class IntersectionResult:
    point: np.ndarray
    coords: np.ndarray
    iterations: int
    contraction: float
    residual: float
    in_box: bool


def intersect(vu: AdmissibleManifold, vs: AdmissibleManifold, tol: float = 1e-14,
              max_iter: int = 200, system: SmoothSystem | None = None, w0=None) -> IntersectionResult:
    """Unique intersection of a u- and an s-manifold in one double chart by w <- G(F(w))."""
    if vu.kind != "u" or vs.kind != "s":
        raise ValueError("need a u-manifold and an s-manifold")
    frame = vu.chart.frame
    u_dim = vu.repr.in_dim
    w = np.zeros(u_dim) if w0 is None else np.asarray(w0, float).reshape(u_dim)
    steps = []
    it = 0
    for it in range(1, max_iter + 1):
        a, out1 = vu.repr.evaluate(w)
        w_new, out2 = vs.repr.evaluate(a)
        if out1 or out2:
            raise NoConvergence("intersection iterate left the manifold boxes")
        w_new = w_new[0]
        step = float(np.max(np.abs(w_new - w)))
        steps.append(step)
        w = w_new
        if step <= tol:
            break
    else:
        raise NoConvergence(f"intersection did not converge in {max_iter} iterations")
    a = vu.repr.evaluate(w)[0][0]
    coords = np.concatenate([a, w])
    resid = float(np.max(np.abs(vs.repr.evaluate(a)[0][0] - w)))
    nz = [s for s in steps if s > 0]
    rate = float(nz[-1] / nz[-2]) if len(nz) >= 2 else 0.0
    eta = min(vu.chart.p_s.value, vu.chart.p_u.value)
    point = wrap(frame.point + frame.c_matrix @ coords)
    return IntersectionResult(point, coords, it, rate, resid,
                              bool(np.max(np.abs(coords)) <= 1e-2 * eta))


@dataclass(frozen=True)
class TransformReport:
    max_iterations: int
    converged: bool
    recurrences: dict      # name -> (measured, bound, ok)
    solvable_radius: float
    solvable: bool
    admissibility: dict


def _blocks(mat, s):
    return mat[:s, :s], mat[s:, s:]


def graph_transform(system: SmoothSystem, v: "DoubleChart", w: "DoubleChart", man: AdmissibleManifold,
                    grid_res: int | None = None, tol: float = 0.0, check: bool = True,
                    epsilon: float | None = None) -> tuple[AdmissibleManifold, TransformReport]:
    """Graph transform along the edge v -> w.

    u-kind: man lives in v and the result is the u-manifold of w inside f(man).
    s-kind: man lives in w and the result is the s-manifold of v inside f^{-1}(man).
    """
    kind = man.kind
    grid_res = man.repr.n if grid_res is None else grid_res
    eps = v.p_s.epsilon if epsilon is None else epsilon
    beta = man.beta
    s = v.frame.s_index
    if w.frame.s_index != s:
        raise ValueError("stable dimensions differ along the edge")
    d = v.frame.dim
    if kind == "u":
        src, dst = v, w
        trans = ChartTransition.build(system, v.frame, w.frame, inverse=False)
        dom = slice(s, d)
        val = slice(0, s)
        target_q = w.p_u.value
        source_q = v.p_u.value
    else:
        src, dst = w, v
        trans = ChartTransition.build(system, w.frame, v.frame, inverse=True)
        dom = slice(0, s)
        val = slice(s, d)
        target_q = v.p_s.value
        source_q = w.p_s.value
    if man.chart is not src and not np.array_equal(man.chart.frame.point, src.frame.point):
        raise ValueError("manifold does not live in the source chart of the transform")
    lin = trans.linear
    d_dom = lin[dom, dom]
    d_dom_inv = np.linalg.inv(d_dom)
    rep = man.repr

    def solve(tau):
        t = tau @ d_dom_inv.T
        ratio_run = 0
        prev = None
        for it in range(1, 201):
            vals, outside = rep.evaluate(t)
            if outside:
                raise ImplicitSolveFailure("implicit solve left the source box")
            vec = np.empty((len(t), d))
            vec[:, dom] = t
            vec[:, val] = vals
            g = trans(vec)
            step = (tau - g[:, dom]) @ d_dom_inv.T
            t = t + step
            size = float(np.max(np.abs(step)))
            if size <= max(tol, 8 * EPS * float(np.max(np.abs(t)))):
                return t, it
            if prev is not None and prev > 0 and size / prev > 0.999:
                ratio_run += 1
                if ratio_run >= 20:
                    raise ImplicitSolveFailure("implicit solve is not contracting")
            else:
                ratio_run = 0
            prev = size
        raise ImplicitSolveFailure("implicit solve did not converge in 200 iterations")

    axis = np.linspace(-target_q, target_q, grid_res)
    in_dim = rep.in_dim
    mesh = np.meshgrid(*([axis] * in_dim), indexing="ij")
    tau = np.stack([m.ravel() for m in mesh], axis=-1)
    t, iters = solve(tau)
    vals = rep.evaluate(t)[0]
    vec = np.empty((len(t), d))
    vec[:, dom] = t
    vec[:, val] = vals
    new_vals = trans(vec)[:, val]
    new_rep = RepresentingFunction(kind, target_q, new_vals.reshape((grid_res,) * in_dim + (d - in_dim,)))
    params = measure_params(new_rep, beta)
    new_man = AdmissibleManifold(dst, new_rep, params, beta)

    # solvability at the radius promised by the q-recurrence
    q_target_chart = (w.q_eps if kind == "u" else v.q_eps).value
    r_hat = min(math.exp(man.chart.frame.chi - math.sqrt(eps)) * source_q, q_target_chart)
    probe_axis = np.linspace(-r_hat, r_hat, 5)
    probe = np.stack([m.ravel() for m in np.meshgrid(*([probe_axis] * in_dim), indexing="ij")], -1)
    try:
        solve(probe)
        solvable = True
    except ImplicitSolveFailure:
        solvable = False

    eta = min(dst.p_s.value, dst.p_u.value)
    fac = math.exp(math.sqrt(eps) - 2 * man.chart.frame.chi)
    old = man.params
    rec = {
        "sigma": (params.sigma, fac * (old.sigma + math.sqrt(eps))),
        "gamma": (params.gamma, fac * (old.gamma + eps ** (beta / 3) * eta ** (beta / 3))),
        "phi": (params.phi, fac * (old.phi + math.sqrt(eps) * eta)),
    }
    rec = {k: (m, b, bool(m <= b)) for k, (m, b) in rec.items()}
    rec["q"] = (r_hat, target_q, bool(solvable and target_q <= r_hat * (1 + 1e-12)))
    report = TransformReport(iters, True, rec, r_hat, solvable, admissibility(new_man, eps))
    if check:
        for name, (m, b, ok) in rec.items():
            if not ok:
                raise AdmissibilityLost(f"{name} recurrence violated: {m:.4e} > {b:.4e}", name, m, b)
    return new_man, report


def graph_transform_u(system, v, w, vu, grid_res=None, tol=0.0, check=True):
    if vu.kind != "u":
        raise ValueError("expected a u-manifold")
    return graph_transform(system, v, w, vu, grid_res, tol, check)


def graph_transform_s(system, v, w, vs, grid_res=None, tol=0.0, check=True):
    if vs.kind != "s":
        raise ValueError("expected an s-manifold")
    return graph_transform(system, v, w, vs, grid_res, tol, check)


@dataclass
class LocalManifoldResult:
    manifold: AdmissibleManifold
    trace: list                       # sup-distances between successive approximations
    reports: list = field(default_factory=list)


def local_manifold(system: SmoothSystem, window: Sequence["DoubleChart"], kind: str, iters: int | None = None,
                   seed: Callable | None = None, grid_res: int = DEFAULT_GRID, trace: bool = False,
                   check: bool = True, beta: float | None = None) -> LocalManifoldResult:
    """Local s/u manifold at the center of a window of double charts.

    ``window`` is indexed -N..N (length 2N+1, center at N).  A u-manifold is
    pushed from index -iters to 0, an s-manifold pulled from +iters to 0.
    With ``trace`` the successive approximations started at -k and -(k+1)
    are compared for every k (quadratic cost).
    """
    beta = system.beta if beta is None else beta
    n_half = (len(window) - 1) // 2
    iters = n_half if iters is None else iters
    if iters > n_half:
        raise ValueError("window shorter than the requested number of steps")
    c = n_half

    def run(k):
        reps = []
        if kind == "u":
            man = make_manifold(window[c - k], "u", seed, grid_res, beta)
            for j in range(c - k, c):
                man, rep = graph_transform(system, window[j], window[j + 1], man, grid_res, check=check)
                reps.append(rep)
        else:
            man = make_manifold(window[c + k], "s", seed, grid_res, beta)
            for j in range(c + k, c, -1):
                man, rep = graph_transform(system, window[j - 1], window[j], man, grid_res, check=check)
                reps.append(rep)
        return man, reps

    man, reps = run(iters)
    tr = []
    if trace:
        prev = None
        for k in range(1, iters + 1):
            mk = man if k == iters else run(k)[0]
            if prev is not None:
                tr.append(manifold_dist(prev, mk))
            prev = mk
    return LocalManifoldResult(man, tr, reps)


def contraction_trace(system: SmoothSystem, window: Sequence["DoubleChart"], kind: str, seeds: Sequence[Callable],
                      grid_res: int = DEFAULT_GRID) -> dict:
    """Apply the graph transform along ``window`` to two seeds and record sup-distance ratios.

    u-manifolds move forward through the window, s-manifolds backward.
    """
    order = list(window) if kind == "u" else list(window)[::-1]
    beta = system.beta
    mans = [make_manifold(order[0], kind, fn, grid_res, beta) for fn in seeds]
    dists = [manifold_dist(mans[0], mans[1])]
    reports = []
    for a, b in zip(order[:-1], order[1:]):
        step = []
        for i, m in enumerate(mans):
            v, w = (a, b) if kind == "u" else (b, a)
            mans[i], rep = graph_transform(system, v, w, m, grid_res)
            step.append(rep)
        reports.append(step)
        dists.append(manifold_dist(mans[0], mans[1]))
    ratios = [d1 / d0 for d0, d1 in zip(dists[:-1], dists[1:]) if d0 > 0]
    return {"distances": dists, "ratios": ratios, "reports": reports, "manifolds": mans}


def stays_in_windows_check(system: SmoothSystem, man: AdmissibleManifold, window: Sequence["DoubleChart"],
                           factor: float = 10.0, samples: int = 9) -> dict:
    """Do sampled points of the manifold stay in the chart boxes along the window?

    s-manifolds are iterated forward from the center, u-manifolds backward.
    Returns per-step maximal box ratio and the overall verdict.
    """
    c = (len(window) - 1) // 2
    nodes = np.linspace(-man.repr.radius, man.repr.radius, samples)
    nodes = np.stack([m.ravel() for m in np.meshgrid(*([nodes] * man.repr.in_dim), indexing="ij")], -1)
    pts = manifold_points(system, man, nodes)
    step = system.map if man.kind == "s" else system.inverse_map
    idx = range(c + 1, len(window)) if man.kind == "s" else range(c - 1, -1, -1)
    ratios = []
    for j in idx:
        pts = step(pts)
        ch = window[j]
        coords = torus_delta(pts, ch.frame.point) @ ch.frame.c_inverse.T
        ratios.append(float(np.max(np.abs(coords)) / (factor * ch.q_eps.value)))
    return {"ok": bool(all(r <= 1.0 for r in ratios)), "ratios": ratios}
