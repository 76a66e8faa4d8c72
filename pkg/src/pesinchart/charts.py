"""Lyapunov inner products, reduction frames, chart sizes and chart transitions.

Chart sizes live on the grid exp(-l*eps/3); they are carried as integers
plus their logarithm so that tiny constants never underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateSplitting, DomainEscape, IllConditioned, NonSummable, WindowTooShort
from .system import (CHART_DOMAIN, SmoothSystem, SplittingData, nuh_test, oseledets_batch,
                     stable_track, torus_delta, unstable_track, wrap)

__all__ = [
    "SizeLedger", "ChartConstants", "LITERAL", "PRACTICAL", "ChartFrame", "PesinChart",
    "OverlapReport", "TransitionDecomposition", "s_norm2", "u_norm2", "chart_frame",
    "chart_frames", "kappa", "reduced_cocycle", "block_form_report", "off_block_norm", "frame_norm_ratio",
    "f0_bound", "log_omega0", "q_size", "q_lemma_checks", "tempered_size", "overlap_test",
    "ChartTransition", "transition_map", "transition_jacobian", "transition_decompose", "hoelder_seminorm", "op_inf",
]

SERIES_FLOOR = 32
SERIES_CAP = 4096
RATIO_STALL = 1.0 - 1e-6
STALL_RUN = 16
GRAM_COND_MAX = 1e12


def _snap_ceil(x: float) -> int:
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


@dataclass(frozen=True, order=True)
class SizeLedger:
    """Chart size exp(-ell*epsilon/3) stored by its integer index."""

    ell: int
    epsilon: float

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("ledger index must be nonnegative")

    @property
    def log_value(self) -> float:
        return -self.ell * self.epsilon / 3.0

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

    @classmethod
    def from_log(cls, log_value: float, epsilon: float) -> "SizeLedger":
        """Largest grid element not exceeding exp(log_value)."""
        return cls(max(_snap_ceil(-3.0 * log_value / epsilon), 0), epsilon)

    @classmethod
    def from_value(cls, value: float, epsilon: float) -> "SizeLedger":
        if value <= 0:
            raise ValueError("size must be positive")
        return cls.from_log(math.log(value), epsilon)

    def times_e_eps(self) -> "SizeLedger":
        return SizeLedger(max(self.ell - 3, 1), self.epsilon)

    def min(self, other: "SizeLedger") -> "SizeLedger":
        return self if self.ell >= other.ell else other

    def to_json(self) -> dict:
        return {"ell": self.ell, "epsilon": self.epsilon}


@dataclass(frozen=True)
class ChartConstants:
    """Constants entering chart sizes and the overlap threshold.

    ``literal`` uses exponents (90, 48) and the 3^(6/beta) prefactor with
    the overlap threshold eta1^4 eta2^4.  ``practical`` substitutes
    (a_eps, a_c, c0) and overlap_coeff * (eta1 eta2)^overlap_power.
    """

    mode: str = "practical"
    a_eps: float = 1.0
    a_c: float = 1.0
    c0: float = 3.0
    overlap_coeff: float = 1e-4
    overlap_power: float = 0.5

    def __post_init__(self):
        if self.mode not in ("literal", "practical"):
            raise ValueError("mode must be literal or practical")

    def log_q_tilde(self, epsilon: float, beta: float, c_inv_norm: float) -> float:
        if self.mode == "literal":
            return (-(6.0 / beta) * math.log(3.0) + (90.0 / beta) * math.log(epsilon)
                    - (48.0 / beta) * math.log(c_inv_norm))
        return (-math.log(self.c0) + (self.a_eps / beta) * math.log(epsilon)
                - (self.a_c / beta) * math.log(c_inv_norm))

    def log_overlap_threshold(self, log_eta1: float, log_eta2: float) -> float:
        if self.mode == "literal":
            return 4.0 * (log_eta1 + log_eta2)
        return math.log(self.overlap_coeff) + self.overlap_power * (log_eta1 + log_eta2)

    def header(self) -> dict:
        if self.mode == "literal":
            return {"mode": "literal"}
        return {"mode": "practical", "a_eps": self.a_eps, "a_c": self.a_c, "c0": self.c0,
                "overlap_coeff": self.overlap_coeff, "overlap_power": self.overlap_power}


LITERAL = ChartConstants("literal", 90.0, 48.0, 1.0, 1.0, 4.0)
PRACTICAL = ChartConstants()


@dataclass(frozen=True)
class ChartFrame:
    point: np.ndarray
    chi: float
    c_matrix: np.ndarray
    c_inverse: np.ndarray
    c_inv_norm: float
    s_index: int
    kappa: float
    truncation: int
    stable_basis: np.ndarray = field(repr=False)
    unstable_basis: np.ndarray = field(repr=False)
    stable_gram: np.ndarray = field(repr=False)
    unstable_gram: np.ndarray = field(repr=False)
    exponents: np.ndarray = field(repr=False, default=None)
    window: int = 64
    tol: float = 1e-14

    @property
    def dim(self) -> int:
        return self.c_matrix.shape[0]

    def to_json(self) -> dict:
        return {"point": self.point.tolist(), "chi": self.chi,
                "c_matrix": self.c_matrix.tolist(), "c_inverse": self.c_inverse.tolist(),
                "c_inv_norm": self.c_inv_norm, "s_index": self.s_index, "kappa": self.kappa,
                "truncation": self.truncation}


def kappa(chi: float, m_f: float) -> float:
    a = math.exp(chi) * (1.0 - 1.0 / (1.0 + m_f ** -2 * math.exp(2 * chi))) ** -0.5
    b = math.exp(chi) * math.sqrt(1.0 + m_f ** 2)
    return max(a, b)


def _gram_series(system, xs, k, chi, tol, window, kind):
    """Lyapunov Gram matrices in the orthonormal bases of the track.

    Returns (gram, truncation, base0) with gram of shape (npts, k, k).
    """
    track = stable_track if kind == "s" else unstable_track
    npts = xs.shape[0]
    n = 64
    while True:
        s = k if kind == "s" else system.dim - k
        _, bases, steps = track(system, xs, s, n, window)
        eye = np.broadcast_to(np.eye(k), (npts, k, k))
        p = eye.copy()
        logscale = np.zeros(npts)
        gram = 2.0 * eye.copy()
        prev_tr = np.full(npts, float(k))
        done = np.zeros(npts, dtype=bool)
        trunc = np.zeros(npts, dtype=int)
        run = np.zeros(npts, dtype=int)
        for m in range(1, n + 1):
            p = steps[m - 1] @ p
            nrm = np.linalg.norm(p, axis=(-2, -1))
            p = p / nrm[:, None, None]
            logscale += np.log(nrm)
            wlog = 2.0 * chi * m + 2.0 * logscale
            term = np.exp(wlog)[:, None, None] * (np.swapaxes(p, -1, -2) @ p)
            tr = np.trace(term, axis1=-2, axis2=-1)
            active = ~done
            gram[active] += 2.0 * term[active]
            ratio = tr / prev_tr
            prev_tr = tr
            run = np.where(ratio >= RATIO_STALL, run + 1, 0)
            if np.any((run >= STALL_RUN) & active):
                raise NonSummable(f"series ratio stayed above 1-1e-6 for {STALL_RUN} terms; chi too close to an exponent")
            tail = np.where(ratio < 1.0, tr * ratio / np.maximum(1.0 - ratio, 1e-300), np.inf)
            total = np.trace(gram, axis1=-2, axis2=-1)
            newly = active & (m >= SERIES_FLOOR) & (2.0 * tail < tol * total)
            trunc[newly] = m
            done |= newly
            if done.all():
                return gram, trunc, bases[0]
        if n >= SERIES_CAP:
            raise NonSummable(f"series not converged within {SERIES_CAP} terms")
        n = min(2 * n, SERIES_CAP)


def _series_for_vector(system, splitting: SplittingData, xi, chi, tol, kind):
    d = system.dim
    s = splitting.s_index
    k = s if kind == "s" else d - s
    gram, trunc, base = _gram_series(system, splitting.point[None, :], k, chi, tol, splitting.window, kind)
    xi = np.asarray(xi, dtype=float)
    vecs = np.atleast_2d(xi)
    coeff = vecs @ base[0]
    resid = np.linalg.norm(vecs - coeff @ base[0].T, axis=-1)
    if np.any(resid > 1e-6 * np.maximum(np.linalg.norm(vecs, axis=-1), 1e-300)):
        raise ValueError(f"vector is not in the {'stable' if kind == 's' else 'unstable'} subspace "
                         f"(residual {resid.max():.2e})")
    vals = np.einsum("ni,ij,nj->n", coeff, gram[0], coeff)
    return float(vals[0]) if xi.ndim == 1 else vals


def s_norm2(system: SmoothSystem, splitting: SplittingData, xi, chi: float, tol: float = 1e-14) -> float:
    """2 * sum_m |d f^m xi|^2 exp(2 chi m) with adaptive truncation.

    ``xi`` may be a single vector or a stack of vectors (one value each).
    """
    return _series_for_vector(system, splitting, xi, chi, tol, "s")


def u_norm2(system: SmoothSystem, splitting: SplittingData, xi, chi: float, tol: float = 1e-14) -> float:
    return _series_for_vector(system, splitting, xi, chi, tol, "u")


def _orthonormalize(base, gram):
    """Gram-Schmidt of the columns of base against the inner product gram."""
    cond = np.linalg.cond(gram)
    if np.any(cond > GRAM_COND_MAX):
        raise IllConditioned(f"Lyapunov Gram matrix condition {float(np.max(cond)):.3e} exceeds {GRAM_COND_MAX:g}")
    low = np.linalg.cholesky(gram)
    k = np.linalg.inv(np.swapaxes(low, -1, -2))   # upper triangular, k^T gram k = I
    vecs = base @ k
    # first nonzero component of every column positive
    idx = np.argmax(np.abs(vecs) > 1e-12, axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(lead < 0, -1.0, 1.0)
    return vecs * sign[..., None, :]


def chart_frames(system: SmoothSystem, xs, chi: float, window: int = 64, tol: float = 1e-14,
                 chi_floor: float = 1e-3) -> list[ChartFrame]:
    """Reduction frames C_chi at a batch of points."""
    xs = wrap(np.atleast_2d(np.asarray(xs, dtype=float)))
    if system.is_linear and len(xs) > 1:
        # the frame of a toral automorphism does not depend on the point
        base = chart_frames(system, xs[:1], chi, window, tol, chi_floor)[0]
        return [replace(base, point=x.copy()) for x in xs]
    splits = oseledets_batch(system, xs, window, chi_floor)
    for sp in splits:
        if not nuh_test(sp, chi):
            raise DegenerateSplitting(
                f"min |exponent| {np.min(np.abs(sp.exponents)):.6f} does not exceed chi={chi} at {sp.point.tolist()}")
    d = system.dim
    kap = kappa(chi, system.m_f)
    out: list[ChartFrame | None] = [None] * len(xs)
    groups: dict[int, list[int]] = {}
    for i, sp in enumerate(splits):
        groups.setdefault(sp.s_index, []).append(i)
    for s, idx in groups.items():
        sub = xs[idx]
        gs, ns, bs = _gram_series(system, sub, s, chi, tol, window, "s")
        gu, nu, bu = _gram_series(system, sub, d - s, chi, tol, window, "u")
        vs = _orthonormalize(bs, gs)
        vu = _orthonormalize(bu, gu)
        cmat = np.concatenate([vs, vu], axis=-1)
        cinv = np.linalg.inv(cmat)
        norms = np.linalg.norm(cinv, 2, axis=(-2, -1))
        for j, i in enumerate(idx):
            out[i] = ChartFrame(xs[i].copy(), chi, cmat[j], cinv[j], float(norms[j]), s, kap,
                                int(max(ns[j], nu[j])), bs[j], bu[j], gs[j], gu[j],
                                splits[i].exponents, window, tol)
    return out


def chart_frame(system: SmoothSystem, splitting_or_point, chi: float, tol: float = 1e-14,
                window: int | None = None) -> ChartFrame:
    if isinstance(splitting_or_point, SplittingData):
        x, w = splitting_or_point.point, splitting_or_point.window
    else:
        x, w = np.asarray(splitting_or_point, dtype=float), 64
    return chart_frames(system, x[None, :], chi, window or w, tol)[0]


def reduced_cocycle(system: SmoothSystem, frame_x: ChartFrame, frame_fx: ChartFrame) -> np.ndarray:
    """D_chi(x) = C^{-1}(f x) d_x f C(x)."""
    return frame_fx.c_inverse @ system.differential(frame_x.point) @ frame_x.c_matrix


def off_block_norm(mat: np.ndarray, s: int) -> float:
    return float(np.sqrt(np.sum(mat[:s, s:] ** 2) + np.sum(mat[s:, :s] ** 2)))


def block_form_report(system: SmoothSystem, frame_x: ChartFrame, frame_fx: ChartFrame,
                      off_tol: float = 1e-8) -> dict:
    """Block structure of D_chi(x): off-block mass, contraction/expansion and kappa bounds."""
    dmat = reduced_cocycle(system, frame_x, frame_fx)
    s = frame_x.s_index
    ds, du = dmat[:s, :s], dmat[s:, s:]
    rate = math.exp(-frame_x.chi)
    kap = frame_x.kappa
    sv_s = np.linalg.svd(ds, compute_uv=False)
    sv_u = np.linalg.svd(du, compute_uv=False)
    slack = 1e-12
    rows = {
        "off_block": (off_block_norm(dmat, s), off_tol),
        "ds_norm": (float(sv_s[0]), rate * (1 + slack)),
        "du_inv_norm": (float(1.0 / sv_u[-1]), rate * (1 + slack)),
        "kappa_s": (float(1.0 / sv_s[-1]), kap * (1 + slack)),
        "kappa_u": (float(sv_u[0]), kap * (1 + slack)),
        "contraction": (float(np.linalg.norm(frame_x.c_matrix, 2)), 1.0 + slack),
        "c_inv_norm": (1.0, frame_x.c_inv_norm * (1 + slack)),
    }
    return {k: {"measured": m, "bound": b, "ok": bool(m <= b)} for k, (m, b) in rows.items()}


def frame_norm_ratio(system: SmoothSystem, frame_x: ChartFrame, frame_fx: ChartFrame) -> float:
    return frame_fx.c_inv_norm / frame_x.c_inv_norm


def f0_bound(chi: float, m_f: float) -> float:
    """Bound F0 on the one-step ratio of ||C^{-1}|| assembled from the series identities."""
    upper = max(math.exp(-2 * chi), math.exp(2 * chi) + m_f ** 2)
    lower = min(math.exp(-2 * chi) / (1 + math.exp(-2 * chi)), math.exp(2 * chi))
    return math.sqrt(max(upper * m_f ** 2, m_f ** 2 / lower))


def log_omega0(chi: float, m_f: float, epsilon: float, beta: float) -> float:
    return epsilon / 3.0 + (48.0 / beta) * math.log(f0_bound(chi, m_f))


def q_size(frame: ChartFrame, epsilon: float, beta: float, constants: ChartConstants = LITERAL) -> SizeLedger:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return SizeLedger.from_log(constants.log_q_tilde(epsilon, beta, frame.c_inv_norm), epsilon)


def q_lemma_checks(q: SizeLedger, c_inv_norm: float, beta: float) -> dict:
    """Q <= eps^{3/beta} and ||C^{-1}||^48 < eps^{2/beta}/Q, in log space."""
    eps = q.epsilon
    upper = q.log_value <= (3.0 / beta) * math.log(eps)
    lhs = 48.0 * math.log(c_inv_norm)
    rhs = (2.0 / beta) * math.log(eps) - q.log_value
    return {"q_below_eps_power": bool(upper), "cinv_power_bound": bool(lhs < rhs),
            "log_q": q.log_value, "lhs": lhs, "rhs": rhs}


@dataclass(frozen=True)
class TemperedSizes:
    sizes: list            # SizeLedger for indices first_index .. first_index+len-1
    first_index: int
    ratio_ok: bool
    below_q_ok: bool
    log_values: np.ndarray = field(repr=False, default=None)


def tempered_size(q_seq: list, epsilon: float, half_window: int = 32, center: int | None = None) -> TemperedSizes:
    """Tempering kernel minorant of a size sequence.

    q_seq holds ledgers for consecutive orbit indices; index ``center`` (default
    the middle) is orbit index 0.  Output covers every index with a full
    symmetric window of half-width half_window.
    """
    n = len(q_seq)
    if n < 2 * half_window + 1:
        raise WindowTooShort(f"need at least {2 * half_window + 1} sizes, got {n}")
    center = n // 2 if center is None else center
    logq = np.array([-q.log_value for q in q_seq])              # log(1/Q_k)
    weights = -np.abs(np.arange(-half_window, half_window + 1)) * epsilon
    out_log = []
    for i in range(half_window, n - half_window):
        seg = logq[i - half_window:i + half_window + 1]
        out_log.append(-(logsumexp(seg + weights) - math.log(epsilon)))
    out_log = np.array(out_log)
    sizes = [SizeLedger.from_log(v, epsilon) for v in out_log]
    ells = np.array([s.ell for s in sizes])
    ratio_ok = bool(np.all(np.abs(np.diff(ells)) <= 3))
    below = all(sizes[j].log_value <= math.log(epsilon) + q_seq[j + half_window].log_value + 1e-12
                for j in range(len(sizes)))
    return TemperedSizes(sizes, half_window - center, ratio_ok, bool(below), out_log)


@dataclass(frozen=True)
class PesinChart:
    frame: ChartFrame
    q_eps: SizeLedger
    eta: SizeLedger

    def __post_init__(self):
        if self.eta.ell < self.q_eps.ell:
            raise ValueError("chart radius must not exceed Q_eps")

    @property
    def point(self):
        return self.frame.point

    def lipschitz_ok(self) -> bool:
        return float(np.linalg.norm(self.frame.c_matrix, 2)) <= 2.0


@dataclass(frozen=True)
class OverlapReport:
    ok: bool
    ledger_ok: bool
    distance_ok: bool
    lhs: float
    log_threshold: float

    @property
    def log_margin(self) -> float:
        if self.lhs == 0.0:
            return math.inf
        return self.log_threshold - math.log(self.lhs)

    def __bool__(self):
        return self.ok


def overlap_test(chart1: PesinChart, chart2: PesinChart, constants: ChartConstants = LITERAL) -> OverlapReport:
    """Size ratio strictly inside exp(+-eps) and frames/points close at scale eta1, eta2."""
    if chart1.eta.epsilon != chart2.eta.epsilon or chart1.frame.chi != chart2.frame.chi:
        raise ValueError("charts must share epsilon and chi")
    ledger_ok = abs(chart1.eta.ell - chart2.eta.ell) < 3
    d = float(np.linalg.norm(torus_delta(chart1.point, chart2.point)))
    dc = float(np.linalg.norm(chart1.frame.c_matrix - chart2.frame.c_matrix, 2)) \
        if chart1.frame.c_matrix.shape == chart2.frame.c_matrix.shape else math.inf
    lhs = d + dc
    log_t = constants.log_overlap_threshold(chart1.eta.log_value, chart2.eta.log_value)
    dist_ok = lhs == 0.0 or (math.isfinite(lhs) and math.log(lhs) < log_t)
    return OverlapReport(bool(ledger_ok and dist_ok), bool(ledger_ok), bool(dist_ok), lhs, log_t)


@dataclass(frozen=True)
class ChartTransition:
    """psi_dst^{-1} o f^{+-1} o psi_src written as offset + linear part + Taylor remainder.

    Keeping the linear part in chart coordinates avoids rounding at the
    scale of the torus, so tiny chart vectors keep their relative precision.
    """

    system: SmoothSystem
    src: ChartFrame
    dst: ChartFrame
    inverse: bool
    offset: np.ndarray
    linear: np.ndarray

    @classmethod
    def build(cls, system: SmoothSystem, src: ChartFrame, dst: ChartFrame, inverse: bool = False):
        step = system.inverse_map if inverse else system.map
        jac = system.inverse_differential if inverse else system.differential
        delta = torus_delta(step(src.point), dst.point)
        offset = dst.c_inverse @ delta
        linear = dst.c_inverse @ jac(src.point) @ src.c_matrix
        return cls(system, src, dst, inverse, offset, linear)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        w = v @ self.src.c_matrix.T
        if np.any(np.max(np.abs(w), axis=-1) >= CHART_DOMAIN):
            raise DomainEscape("chart vector leaves the exponential chart domain")
        rem = self.system.second_order(self.src.point, w, self.inverse)
        return self.offset + v @ self.linear.T + rem @ self.dst.c_inverse.T

    def jacobian(self, v):
        v = np.asarray(v, dtype=float)
        jac = self.system.inverse_differential if self.inverse else self.system.differential
        pts = wrap(self.src.point + v @ self.src.c_matrix.T)
        return self.dst.c_inverse @ jac(pts) @ self.src.c_matrix


def transition_map(system: SmoothSystem, src: ChartFrame, dst: ChartFrame, v, inverse: bool = False):
    """psi_dst^{-1} o f o psi_src on chart vectors v of shape (..., d)."""
    return ChartTransition.build(system, src, dst, inverse)(v)


def transition_jacobian(system: SmoothSystem, src: ChartFrame, dst: ChartFrame, v, inverse: bool = False):
    return ChartTransition.build(system, src, dst, inverse).jacobian(v)


def _grid(radius: float, n: int, dim: int) -> np.ndarray:
    axis = np.linspace(-radius, radius, n)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def op_inf(mats: np.ndarray) -> np.ndarray:
    """Operator norm induced by the sup norm: max absolute row sum."""
    return np.max(np.sum(np.abs(mats), axis=-1), axis=-1)


def hoelder_seminorm(points: np.ndarray, values: np.ndarray, alpha: float, min_sep: float = 0.0,
                     max_nodes: int = 1500, norm: str = "2") -> float:
    """Max |V(a)-V(b)| / |a-b|_inf^alpha over node pairs at sup-distance >= min_sep.

    values has shape (n, ...): matrices are compared in operator norm
    (``norm`` "2" or "inf"), vectors in the matching vector norm.
    Large grids are strided down to about max_nodes.
    """
    n = len(points)
    if n > max_nodes:
        stride = int(math.ceil(n / max_nodes))
        points, values = points[::stride], values[::stride]
    diff_p = np.max(np.abs(points[:, None, :] - points[None, :, :]), axis=-1)
    dv = values[:, None] - values[None, :]
    if dv.ndim == 4:
        dn = op_inf(dv) if norm == "inf" else np.linalg.norm(dv, 2, axis=(-2, -1))
    elif dv.ndim == 3:
        dn = np.max(np.abs(dv), axis=-1) if norm == "inf" else np.linalg.norm(dv, axis=-1)
    else:
        dn = np.abs(dv)
    mask = diff_p > 0
    if min_sep > 0:
        mask &= diff_p >= min_sep * (1 - 1e-9)
    if not mask.any():
        return 0.0
    return float(np.max(dn[mask] / diff_p[mask] ** alpha))


@dataclass(frozen=True)
class TransitionDecomposition:
    d_s: np.ndarray
    d_u: np.ndarray
    h_origin: np.ndarray
    dh_origin_norm: float
    hoelder_estimate: float
    grid: np.ndarray = field(repr=False)
    h_values: np.ndarray = field(repr=False)
    eta: float = 0.0
    checks: dict = field(default_factory=dict)


def transition_decompose(system: SmoothSystem, chart_x: PesinChart, chart_y: PesinChart,
                         frame_fx: ChartFrame, grid_res: int = 33, beta: float | None = None,
                         epsilon: float | None = None) -> TransitionDecomposition:
    """Split f_xy into the block-linear part D_chi(x) and the remainder h on a grid."""
    beta = system.beta if beta is None else beta
    eps = chart_x.eta.epsilon if epsilon is None else epsilon
    fx, fy = chart_x.frame, chart_y.frame
    s = fx.s_index
    d = system.dim
    eta = chart_x.eta.value
    grid = _grid(eta, grid_res, d)
    dmat = reduced_cocycle(system, fx, frame_fx)
    tr = ChartTransition.build(system, fx, fy)
    h = tr(grid) - grid @ dmat.T
    jac = tr.jacobian(grid) - dmat
    h0 = tr(np.zeros(d))
    dh0 = tr.jacobian(np.zeros(d)) - dmat
    cell = 2 * eta / (grid_res - 1)
    hol = hoelder_seminorm(grid, jac, beta / 3.0, 2 * cell)
    d_s, d_u = dmat[:s, :s], dmat[s:, s:]
    e = math.exp(-fx.chi)
    kap = fx.kappa
    checks = {
        "h0": bool(np.max(np.abs(h0)) < eps * eta),
        "dh0": bool(np.linalg.norm(dh0, 2) < eps * eta ** (beta / 3.0)),
        "hoelder": bool(hol <= eps),
        "ds": bool(np.linalg.norm(d_s, 2) <= e * (1 + 1e-12)),
        "du_inv": bool(np.linalg.norm(np.linalg.inv(d_u), 2) <= e * (1 + 1e-12)),
        "ds_inv": bool(np.linalg.norm(np.linalg.inv(d_s), 2) <= kap),
        "du": bool(np.linalg.norm(d_u, 2) <= kap),
    }
    return TransitionDecomposition(d_s, d_u, h0, float(np.linalg.norm(dh0, 2)), hol, grid, h, eta, checks)
