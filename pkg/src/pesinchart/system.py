"""Diffeomorphisms of flat tori, cocycles and finite-window Oseledets data.

Points are arrays of shape (..., d) with coordinates in [0, 1).  All maps
accept batches; differentials return arrays of shape (..., d, d).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CocycleOverflow, DegenerateSplitting

__all__ = [
    "SmoothSystem",
    "SplittingData",
    "wrap",
    "torus_delta",
    "distance",
    "exp_map",
    "make_builtin",
    "check_system",
    "orbit",
    "cocycle",
    "oseledets",
    "oseledets_batch",
    "nuh_test",
    "stable_track",
    "unstable_track",
]

CHART_DOMAIN = 0.49  # radius of the exp chart on the flat torus
MAX_DIM = 4
OVERFLOW_LIMIT = 1e300

Array = np.ndarray
PointMap = Callable[[Array], Array]


def wrap(x: Array) -> Array:
    """Reduce coordinates to [0, 1)."""
    x = np.asarray(x, dtype=float)
    y = x - np.floor(x)
    return np.where(y >= 1.0, 0.0, y)


def torus_delta(a: Array, b: Array) -> Array:
    """Shortest representative of a - b, each coordinate in [-1/2, 1/2]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - np.round(d)


def distance(a: Array, b: Array) -> Array:
    return np.linalg.norm(torus_delta(a, b), axis=-1)


def exp_map(x: Array, v: Array) -> Array:
    return wrap(np.asarray(x) + np.asarray(v))


@dataclass(frozen=True)
class SmoothSystem:
    name: str
    dim: int
    map: PointMap
    inverse_map: PointMap
    differential: PointMap
    inverse_differential: PointMap
    beta: float = 1.0
    m_f: float = 1.0
    linear_part: Array | None = None
    is_linear: bool = False
    params: dict = field(default_factory=dict)
    # (x, w) -> f(x + w) - f(x) - d_x f w on the lift; None means identically zero
    remainder: Callable[[Array, Array], Array] | None = field(default=None, repr=False)
    inverse_remainder: Callable[[Array, Array], Array] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 2 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must lie in [2, {MAX_DIM}], got {self.dim}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.m_f < 1.0:
            raise ValueError("m_f must be at least 1")

    def second_order(self, x: Array, w: Array, inverse: bool = False) -> Array:
        """Taylor remainder of f (or f^-1) at x along the increment w.

        Computed without forming f(x + w) - f(x), so it keeps full relative
        precision for small w.
        """
        fn = self.inverse_remainder if inverse else self.remainder
        w = np.asarray(w, dtype=float)
        if fn is None:
            return np.zeros(np.broadcast_shapes(np.shape(x), w.shape))
        return fn(np.asarray(x, dtype=float), w)


def _linear_system(name: str, mat: Array) -> SmoothSystem:
    mat = np.asarray(mat, dtype=float)
    inv = np.linalg.inv(mat)
    inv = np.round(inv) if np.allclose(inv, np.round(inv)) else inv
    m_f = max(np.linalg.norm(mat, 2), np.linalg.norm(inv, 2), 1.0)

    def fwd(x):
        return wrap(np.asarray(x) @ mat.T)

    def bwd(x):
        return wrap(np.asarray(x) @ inv.T)

    def dfwd(x):
        x = np.asarray(x)
        return np.broadcast_to(mat, x.shape[:-1] + mat.shape).copy()

    def dbwd(x):
        x = np.asarray(x)
        return np.broadcast_to(inv, x.shape[:-1] + inv.shape).copy()

    return SmoothSystem(name, mat.shape[0], fwd, bwd, dfwd, dbwd, 1.0, float(m_f),
                        linear_part=mat.copy(), is_linear=True)


CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
PLASTIC = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
MAX_DELTA = 0.05


def _sin_minus_id(phi: Array) -> Array:
    """sin(phi) - phi without cancellation for small phi."""
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < 0.3
    p2 = phi * phi
    series = np.zeros_like(phi)
    term = -phi * p2 / 6.0
    for k in range(1, 8):
        series = series + term
        term = -term * p2 / ((2 * k + 2) * (2 * k + 3))
    return np.where(small, series, np.sin(phi) - phi)


def _perturbed_cat(delta: float) -> SmoothSystem:
    twopi = 2.0 * np.pi
    a = CAT

    def fwd(x):
        x = np.asarray(x, dtype=float)
        y = x @ a.T
        y[..., 0] += delta * np.sin(twopi * x[..., 0])
        return wrap(y)

    def solve_first(c):
        # x1 + delta*sin(2 pi x1) = c has a unique root; the map is monotone
        t = np.array(c, dtype=float, copy=True)
        polish = 0
        for _ in range(60):
            g = t + delta * np.sin(twopi * t) - c
            step = g / (1.0 + twopi * delta * np.cos(twopi * t))
            t = t - step
            if np.all(np.abs(step) < 1e-12):
                polish += 1
                if polish == 2:
                    break
        return t

    def bwd(y):
        y = np.asarray(y, dtype=float)
        c = y[..., 0] - y[..., 1]
        x1 = solve_first(c)
        x2 = y[..., 1] - x1
        return wrap(np.stack([x1, x2], axis=-1))

    def dfwd(x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(a, x.shape[:-1] + (2, 2)).copy()
        out[..., 0, 0] += twopi * delta * np.cos(twopi * x[..., 0])
        return out

    def dbwd(y):
        return np.linalg.inv(dfwd(bwd(y)))

    def second(theta, u):
        # sin(theta + 2 pi u) - sin(theta) - 2 pi u cos(theta)
        return (np.cos(theta) * _sin_minus_id(twopi * u)
                - np.sin(theta) * 2.0 * np.sin(np.pi * u) ** 2)

    def rem(x, w):
        theta = twopi * x[..., 0]
        out = np.zeros(np.broadcast_shapes(x.shape, w.shape))
        out[..., 0] = delta * second(theta, w[..., 0])
        return out

    def inv_rem(y, w):
        theta = twopi * bwd(y)[..., 0]
        a = 1.0 + twopi * delta * np.cos(theta)
        u_lin = (w[..., 0] - w[..., 1]) / a
        e = np.zeros_like(u_lin)
        for _ in range(60):
            e_new = -delta * second(theta, u_lin + e) / a
            done = np.all(np.abs(e_new - e) <= 1e-18 * np.maximum(np.abs(e_new), 1e-300))
            e = e_new
            if done:
                break
        return np.stack([e, -e], axis=-1)

    # df depends on x1 only; sample its whole range for the norm bound
    grid = np.linspace(0.0, 1.0, 4097)
    pts = np.stack([grid, np.zeros_like(grid)], axis=-1)
    mats = dfwd(pts)
    norms = np.concatenate([np.linalg.norm(mats, 2, axis=(-2, -1)),
                            np.linalg.norm(np.linalg.inv(mats), 2, axis=(-2, -1))])
    m_f = float(max(norms.max() * (1 + 1e-12), 1.0))
    return SmoothSystem(f"pcat2({delta:g})", 2, fwd, bwd, dfwd, dbwd, 1.0, m_f,
                        linear_part=CAT.copy(), is_linear=(delta == 0.0),
                        params={"delta": float(delta)},
                        remainder=None if delta == 0.0 else rem,
                        inverse_remainder=None if delta == 0.0 else inv_rem)


_PCAT = re.compile(r"^pcat2\(\s*([-+0-9.eE]+)\s*\)$")


def make_builtin(name: str, delta: float | None = None) -> SmoothSystem:
    """Builtin test systems: ``cat2``, ``plastic3`` and ``pcat2`` (needs delta).

    ``pcat2(0.01)`` style names are accepted as well.
    """
    key = name.strip().lower()
    m = _PCAT.match(key)
    if m:
        if delta is not None and float(m.group(1)) != float(delta):
            raise ValueError("conflicting delta values")
        key, delta = "pcat2", float(m.group(1))
    if key == "cat2":
        return _linear_system("cat2", CAT)
    if key == "plastic3":
        return _linear_system("plastic3", PLASTIC)
    if key == "pcat2":
        if delta is None:
            raise ValueError("pcat2 needs a delta parameter")
        delta = float(delta)
        if not 0.0 <= delta <= MAX_DELTA:
            raise ValueError(f"delta must lie in [0, {MAX_DELTA}]; hyperbolicity margin not guaranteed")
        return _perturbed_cat(delta)
    raise ValueError(f"unknown system {name!r}")


def check_system(system: SmoothSystem, samples: Array) -> dict:
    """Residuals of the structural invariants on sample points."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    fx = system.map(x)
    back = float(np.max(distance(system.inverse_map(fx), x)))
    eye = np.eye(system.dim)
    chain = system.differential(x) @ system.inverse_differential(fx)
    chain_err = float(np.max(np.abs(chain - eye)))
    d = system.differential(x)
    di = system.inverse_differential(x)
    sup = float(max(np.linalg.norm(d, 2, axis=(-2, -1)).max(), np.linalg.norm(di, 2, axis=(-2, -1)).max()))
    return {"inverse_residual": back, "chain_rule_residual": chain_err,
            "sampled_norm_sup": sup, "m_f": system.m_f, "m_f_ok": system.m_f >= sup * (1 - 1e-12)}


def orbit(system: SmoothSystem, x: Array, n: int) -> Array:
    """Orbit segment x, f(x), ..., f^n(x) (n < 0 iterates the inverse)."""
    step = system.map if n >= 0 else system.inverse_map
    pts = [wrap(np.asarray(x, dtype=float))]
    for _ in range(abs(n)):
        pts.append(step(pts[-1]))
    return np.stack(pts)


def cocycle(system: SmoothSystem, x: Array, n: int, max_steps: int = 512) -> Array:
    """Ordered product of differentials along the orbit of x."""
    if abs(n) > max_steps:
        raise ValueError(f"|n| = {abs(n)} exceeds the configured maximum {max_steps}")
    x = wrap(np.asarray(x, dtype=float))
    out = np.broadcast_to(np.eye(system.dim), x.shape[:-1] + (system.dim,) * 2).copy()
    if n == 0:
        return out
    step = system.map if n > 0 else system.inverse_map
    jac = system.differential if n > 0 else system.inverse_differential
    for _ in range(abs(n)):
        out = jac(x) @ out
        if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > OVERFLOW_LIMIT:
            raise CocycleOverflow("cocycle entries exceed 1e300; rescale or shorten the segment")
        x = step(x)
    return out


def _qr(m: Array) -> tuple[Array, Array]:
    q, r = np.linalg.qr(m)
    sign = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    sign = np.where(sign == 0, 1.0, sign)
    return q * sign[..., None, :], r * sign[..., :, None]


def _generic_frame(d: int) -> Array:
    # fixed, deliberately non-special starting frame
    rng = np.random.default_rng(271828)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q


def _max_principal_sin(a: Array, b: Array) -> Array:
    """Sine of the largest principal angle between column spans (orthonormal input)."""
    resid = b - a @ (np.swapaxes(a, -1, -2) @ b)
    return np.linalg.norm(resid, 2, axis=(-2, -1))


@dataclass(frozen=True)
class SplittingData:
    point: Array
    stable_basis: Array    # d x s, orthonormal columns, most contracted first
    unstable_basis: Array  # d x (d-s), orthonormal columns, most expanded first
    s_index: int
    exponents: Array       # descending
    window: int
    residual: float
    condition: float
    raw_exponents: Array = field(default=None, repr=False)


def _cluster(values: Array, tol: float) -> Array:
    """Replace runs of nearly equal values by their mean (values sorted descending)."""
    out = values.copy()
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and values[j] - values[j + 1] < tol:
            j += 1
        if j > i:
            out[i:j + 1] = values[i:j + 1].mean()
        i = j + 1
    return out


def oseledets_batch(system: SmoothSystem, xs: Array, window: int, chi_floor: float = 1e-3,
                    cluster_tol: float | None = None, raise_degenerate: bool = True) -> list[SplittingData]:
    """Finite-window Oseledets splitting for a batch of points.

    Exponents come from QR accumulation along the forward window, started
    from the pushed-forward expanding flag.  Exponents of one sign that the
    window cannot separate (gap below ``cluster_tol``, default 4/window) are
    reported as their mean; block sums are exact either way.
    """
    if window < 8:
        raise ValueError("window must be at least 8")
    d = system.dim
    xs = wrap(np.atleast_2d(np.asarray(xs, dtype=float)))
    npts = xs.shape[0]
    gen = np.broadcast_to(_generic_frame(d), (npts, d, d))
    back = orbit(system, xs, -window)          # back[k] = f^{-k}(x)
    fwd = orbit(system, xs, window)            # fwd[k] = f^{k}(x)
    short = (3 * window) // 4

    # expanding flag at x: push forward from f^{-W}(x); back[k] -> back[k-1]
    def push_from(depth):
        q = gen
        for k in range(depth, 0, -1):
            q, _ = _qr(system.differential(back[k]) @ q)
        return q

    def pull_from(depth):
        q = gen
        for k in range(depth, 0, -1):
            q, _ = _qr(np.linalg.inv(system.differential(fwd[k - 1])) @ q)
        return q

    fu, fu_short = push_from(window), push_from(short)
    fs, fs_short = pull_from(window), pull_from(short)

    q = fu
    logs = np.zeros((npts, d))
    for k in range(window):
        q, r = _qr(system.differential(fwd[k]) @ q)
        logs += np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
    raw = logs / window
    tol = (4.0 / window) if cluster_tol is None else cluster_tol

    out = []
    for i in range(npts):
        ex = raw[i]
        s = int(np.sum(ex < 0))
        order = np.argsort(-ex, kind="stable")
        ex_sorted = ex[order]
        pos, neg = ex_sorted[ex_sorted >= 0], ex_sorted[ex_sorted < 0]
        ex_final = np.concatenate([_cluster(pos, tol), _cluster(neg, tol)])
        degenerate = s < 1 or s > d - 1 or np.min(np.abs(ex_final)) < chi_floor
        if degenerate and raise_degenerate:
            raise DegenerateSplitting(
                f"exponents {np.round(ex_final, 6).tolist()} at {xs[i].tolist()} give s={s} "
                f"or fall below the floor {chi_floor}")
        s_c = min(max(s, 1), d - 1)
        es, eu = fs[i][:, :s_c], fu[i][:, :d - s_c]
        res = max(float(_max_principal_sin(eu, fu_short[i][:, :d - s_c])),
                  float(_max_principal_sin(es, fs_short[i][:, :s_c])))
        cond = float(np.linalg.cond(np.hstack([es, eu])))
        out.append(SplittingData(xs[i].copy(), es.copy(), eu.copy(), s, ex_final, window, res, cond, raw[i].copy()))
    return out


def oseledets(system: SmoothSystem, x: Array, window: int, chi_floor: float = 1e-3,
              cluster_tol: float | None = None) -> SplittingData:
    return oseledets_batch(system, np.asarray(x, dtype=float)[None, :], window, chi_floor, cluster_tol)[0]


def nuh_test(splitting: SplittingData, chi: float) -> bool:
    if chi <= 0:
        raise ValueError("chi must be positive")
    d = len(splitting.exponents)
    return bool(np.min(np.abs(splitting.exponents)) > chi and 1 <= splitting.s_index <= d - 1)


def stable_track(system: SmoothSystem, xs: Array, s: int, n: int, window: int):
    """Orthonormal stable bases along x_0..x_n and the restricted cocycle.

    Returns (points, bases, steps) with bases[j] of shape (npts, d, s) and
    steps[j] the s x s matrix of df(x_j) in the bases at x_j and x_{j+1}.
    """
    xs = wrap(np.atleast_2d(xs))
    d = system.dim
    pts = orbit(system, xs, n + window)
    q = np.broadcast_to(_generic_frame(d)[:, :s], (xs.shape[0], d, s))
    for k in range(n + window, n, -1):
        q, _ = _qr(np.linalg.inv(system.differential(pts[k - 1])) @ q)
    bases = [None] * (n + 1)
    steps = [None] * n
    bases[n] = q
    for k in range(n, 0, -1):
        q, r = _qr(np.linalg.inv(system.differential(pts[k - 1])) @ q)
        bases[k - 1] = q
        steps[k - 1] = np.linalg.inv(r)
    return pts[: n + 1], bases, steps


def unstable_track(system: SmoothSystem, xs: Array, s: int, n: int, window: int):
    """Unstable analogue of :func:`stable_track` along x_0, x_{-1}, ..., x_{-n}."""
    xs = wrap(np.atleast_2d(xs))
    d = system.dim
    u = d - s
    pts = orbit(system, xs, -(n + window))
    q = np.broadcast_to(_generic_frame(d)[:, :u], (xs.shape[0], d, u))
    for k in range(n + window, n, -1):
        q, _ = _qr(system.differential(pts[k]) @ q)
    bases = [None] * (n + 1)
    steps = [None] * n
    bases[n] = q
    for k in range(n, 0, -1):
        q, r = _qr(system.differential(pts[k]) @ q)
        bases[k - 1] = q
        steps[k - 1] = np.linalg.inv(r)
    return pts[: n + 1], bases, steps
