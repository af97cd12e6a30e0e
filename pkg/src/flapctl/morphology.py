"""Closed wing-contour fitting with periodic cubic B-splines, plus morphometrics.

Data points get chord-length parameters (centripetal and uniform starts are
also tried). Control points come from least squares over the periodic cubic
basis; the parameters are then refined by alternating orthogonal
Gauss-Newton steps and foot-point projection, so the reported error is
geometric rather than an artefact of the initial parameterization. The control-point count is the smallest that brings the
residual sum of squares under the budget ``s = alpha * N``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._accel import njit
from .errors import DegenerateSegmentError, IllConditionedError

log = logging.getLogger(__name__)

DEGREE = 3
MIN_POINTS = 8
COND_LIMIT = 1e12


# ---------------------------------------------------------------- basis

def bspline_basis(i: int, p: int, u: float, U) -> float:
    """Cox-de Boor recursion; 0/0 fractions count as zero."""
    U = np.asarray(U, dtype=float)
    if p == 0:
        return 1.0 if U[i] <= u < U[i + 1] else 0.0
    out = 0.0
    d1 = U[i + p] - U[i]
    if d1 != 0.0:
        out += (u - U[i]) / d1 * bspline_basis(i, p - 1, u, U)
    d2 = U[i + p + 1] - U[i + 1]
    if d2 != 0.0:
        out += (U[i + p + 1] - u) / d2 * bspline_basis(i + 1, p - 1, u, U)
    return out


def periodic_knot_vector(knots) -> np.ndarray:
    """Extend n breakpoints in [0, 1) by three periods' worth on each side.

    Entry ``k`` holds breakpoint ``k - 3``; breakpoint ``j + n`` is breakpoint
    ``j`` plus one. Basis function ``m`` (on entries ``m..m+4``) weights
    control point ``m mod n``.
    """
    tau = np.asarray(knots, dtype=float)
    n = tau.size
    k = np.arange(-DEGREE, n + DEGREE + 1)
    return tau[k % n] + np.floor_divide(k, n)


@njit
def _span(E, n, u):
    lo = 3
    hi = n + 3
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if E[mid] <= u:
            lo = mid
        else:
            hi = mid
    return lo


@njit
def _ders(E, J, u, nd):
    """Non-zero cubic basis values and derivatives up to order nd at span J."""
    p = 3
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - E[J + 1 - j]
        right[j] = E[J + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved
    ders = np.zeros((nd + 1, p + 1))
    for j in range(p + 1):
        ders[0, j] = ndu[j, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1 = 0
        s2 = 1
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nd + 1):
        for j in range(p + 1):
            ders[k, j] *= fac
        fac *= p - k
    return ders


@njit
def _design(E, n, us, nd):
    """Dense periodic design matrices for values and derivatives, shape (nd+1, m, n)."""
    m = us.shape[0]
    B = np.zeros((nd + 1, m, n))
    for i in range(m):
        u = us[i] - math.floor(us[i])
        J = _span(E, n, u)
        d = _ders(E, J, u, nd)
        for k in range(4):
            col = (J - 3 + k) % n
            for r in range(nd + 1):
                B[r, i, col] += d[r, k]
    return B


@njit
def _eval(E, n, P, us, nd):
    """Curve points and derivatives, shape (nd+1, m, 2)."""
    m = us.shape[0]
    out = np.zeros((nd + 1, m, 2))
    for i in range(m):
        u = us[i] - math.floor(us[i])
        J = _span(E, n, u)
        d = _ders(E, J, u, nd)
        for k in range(4):
            col = (J - 3 + k) % n
            for r in range(nd + 1):
                out[r, i, 0] += d[r, k] * P[col, 0]
                out[r, i, 1] += d[r, k] * P[col, 1]
    return out


@njit
def _project(E, n, P, pts, us, iters):
    """Newton foot-point refinement of parameters for each data point."""
    m = pts.shape[0]
    res = us.copy()
    for i in range(m):
        u = res[i]
        for _ in range(iters):
            uu = u - math.floor(u)
            J = _span(E, n, uu)
            d = _ders(E, J, uu, 2)
            c0 = np.zeros(2)
            c1 = np.zeros(2)
            c2 = np.zeros(2)
            for k in range(4):
                col = (J - 3 + k) % n
                for a in range(2):
                    c0[a] += d[0, k] * P[col, a]
                    c1[a] += d[1, k] * P[col, a]
                    c2[a] += d[2, k] * P[col, a]
            rx = c0[0] - pts[i, 0]
            ry = c0[1] - pts[i, 1]
            g = rx * c1[0] + ry * c1[1]
            h = c1[0] * c1[0] + c1[1] * c1[1]
            h2 = h + rx * c2[0] + ry * c2[1]
            if h2 > 0.25 * h:
                h = h2
            if h <= 0.0:
                break
            step = g / h
            # Keep each step inside roughly one knot interval.
            lim = 0.5 * (E[J + 1] - E[J]) + 1e-12
            if step > lim:
                step = lim
            elif step < -lim:
                step = -lim
            u -= step
            if abs(step) < 1e-15:
                break
        res[i] = u
    return res


# ---------------------------------------------------------------- models

@dataclass(frozen=True)
class SplineModel:
    control_points: np.ndarray
    knots: np.ndarray
    degree: int = DEGREE
    _E: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.ascontiguousarray(self.control_points, dtype=float)
        tau = np.ascontiguousarray(self.knots, dtype=float)
        if self.degree != DEGREE:
            raise ValueError("only cubic periodic splines are supported")
        if P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < DEGREE + 1:
            raise ValueError("control points must be an (n >= 4, 2) array")
        if tau.size != P.shape[0] or tau[0] != 0.0 or np.any(np.diff(tau) <= 0) or tau[-1] >= 1:
            raise ValueError("knots must be n increasing breakpoints in [0, 1) starting at 0")
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "knots", tau)
        object.__setattr__(self, "_E", periodic_knot_vector(tau))

    @classmethod
    def uniform(cls, control_points) -> "SplineModel":
        n = len(control_points)
        return cls(np.asarray(control_points, float), np.arange(n) / n)

    @property
    def n(self) -> int:
        return self.control_points.shape[0]

    @property
    def knot_vector(self) -> np.ndarray:
        return self._E

    def evaluate(self, u, der: int = 0) -> np.ndarray:
        us = np.atleast_1d(np.asarray(u, dtype=float))
        out = _eval(self._E, self.n, self.control_points, np.ascontiguousarray(us), der)[der]
        return out[0] if np.ndim(u) == 0 else out

    def resample(self, M: int = 1000) -> np.ndarray:
        return self.evaluate(np.arange(M) / M)

    def basis_matrix(self, u, der: int = 0) -> np.ndarray:
        us = np.ascontiguousarray(np.atleast_1d(u), dtype=float)
        return _design(self._E, self.n, us, der)[der]


def evaluate_curve(model: SplineModel, u) -> np.ndarray:
    return model.evaluate(u)


def resample(model: SplineModel, M: int = 1000) -> np.ndarray:
    return model.resample(M)


@dataclass
class FitReport:
    e: np.ndarray
    rms: float
    N: int
    n: int
    M: int
    alpha_smooth: float
    p95: float = math.nan
    sse: float = math.nan
    budget: float = math.nan
    rms_resample: float = math.nan
    condition: float = math.nan
    iterations: int = 0


# ---------------------------------------------------------------- fitting

def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("contour must be an (N, 2) array of points")
    if not np.all(np.isfinite(P)):
        raise ValueError("contour contains non-finite coordinates")
    return P


def chord_params(points) -> np.ndarray:
    """Cumulative chord fractions of a closed polygon; the closing edge ends at 1."""
    P = _as_points(points)
    seg = np.linalg.norm(np.diff(np.vstack([P, P[:1]]), axis=0), axis=1)
    bad = np.flatnonzero(seg == 0.0)
    if bad.size:
        j = int(bad[0])
        raise DegenerateSegmentError(
            f"points {j} and {(j + 1) % len(P)} coincide; chord length is zero")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum[:-1] / cum[-1]


def centripetal_params(points) -> np.ndarray:
    """Like :func:`chord_params` with square-rooted segment lengths."""
    P = _as_points(points)
    chord_params(P)  # validates segments
    seg = np.sqrt(np.linalg.norm(np.diff(np.vstack([P, P[:1]]), axis=0), axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum[:-1] / cum[-1]


def uniform_params(points) -> np.ndarray:
    """Index-proportional parameters, exact for curves resampled uniformly in u."""
    N = _as_points(points).shape[0]
    return np.arange(N) / N


PARAM_STARTS = {"chord": chord_params, "centripetal": centripetal_params,
                "uniform": uniform_params}


def _lsq(B: np.ndarray, D: np.ndarray, penalty: np.ndarray | None = None,
         lam: float = 0.0) -> tuple[np.ndarray, float]:
    A = B.T @ B
    if penalty is not None and lam > 0:
        A = A + lam * penalty
    cond = float(np.linalg.cond(A))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedError(
            f"normal equations ill-conditioned (condition estimate {cond:.3e})", cond)
    return np.linalg.solve(A, B.T @ D), cond


def _sse(model: SplineModel, D: np.ndarray, t: np.ndarray) -> float:
    r = model.evaluate(t) - D
    return float(np.sum(r * r))


def _refine(D: np.ndarray, t: np.ndarray, model: SplineModel, max_iter: int,
            tol: float) -> tuple[SplineModel, np.ndarray, int]:
    """Orthogonal-distance refinement with the breakpoints held fixed.

    Each sweep linearizes the curve about the current foot points, solves for
    the control-point update that minimizes the residual normal to the curve
    (the tangential part is absorbed by the parameters), then re-projects.
    """
    E, n = model._E, model.n
    P = model.control_points.copy()
    t = _project(E, n, P, D, t.copy(), 8)
    prev = _sse(model, D, t)
    it = 0
    mu = 0.0
    for it in range(1, max_iter + 1):
        B = _design(E, n, np.ascontiguousarray(t), 0)[0]
        C = _eval(E, n, P, np.ascontiguousarray(t), 1)
        T = C[1] / np.linalg.norm(C[1], axis=1, keepdims=True)
        Nrm = np.column_stack([-T[:, 1], T[:, 0]])
        r = C[0] - D
        rn = np.sum(r * Nrm, axis=1)
        # Rows: n_j . (B_j dP) = -n_j . r_j, unknowns stacked (dPx, dPy).
        A = np.hstack([B * Nrm[:, :1], B * Nrm[:, 1:]])
        H = A.T @ A
        g = A.T @ rn
        accepted = False
        for _ in range(12):
            dP = -np.linalg.solve(H + mu * np.diag(np.diag(H)) + 1e-14 * np.eye(2 * n), g)
            Pn = P + np.column_stack([dP[:n], dP[n:]])
            tn = _project(E, n, Pn, D, t, 8)
            cand = SplineModel(Pn, model.knots)
            sse = _sse(cand, D, tn)
            if sse <= prev:
                accepted = True
                break
            mu = max(mu * 10.0, 1e-6)
        if not accepted:
            break
        mu *= 0.1
        gain = prev - sse
        P, t, model, prev = Pn, tn, cand, sse
        if gain <= tol * max(prev, 1e-300) or prev < 1e-26:
            break
    return model, t, it


def _knots_for(n: int, t: np.ndarray, mode: str) -> np.ndarray:
    if mode == "uniform" or (mode == "auto" and n != t.size):
        return np.arange(n) / n
    if n == t.size:
        return t.copy()
    q = np.quantile(t, np.arange(n) / n)
    q[0] = 0.0
    return q


def _periodic_second_difference(n: int) -> np.ndarray:
    Dm = np.zeros((n, n))
    for i in range(n):
        Dm[i, (i - 1) % n] += 1.0
        Dm[i, i] -= 2.0
        Dm[i, (i + 1) % n] += 1.0
    return Dm.T @ Dm


def _fit_fixed(D, starts, n, knots, refine, max_iter, tol):
    """Best of the refined fits from each initial parameterization."""
    best = None
    for t0 in starts:
        cand = _fit_one(D, t0, n, knots, refine, max_iter, tol)
        sse = _sse(cand[0], D, cand[1])
        if best is None or sse < best[0]:
            best = (sse, cand)
    return best[1]


def _fit_one(D, t0, n, knots, refine, max_iter, tol):
    tau = _knots_for(n, t0, knots)
    E = periodic_knot_vector(tau)
    B = _design(E, n, np.ascontiguousarray(t0), 0)[0]
    P, cond = _lsq(B, D)
    model = SplineModel(P, tau)
    t = t0
    it = 0
    if refine and n < D.shape[0]:
        model, t, it = _refine(D, t0, model, max_iter, tol)
    return model, t, cond, it


def fit_periodic_smoothing_spline(points, alpha_smooth: float = 0.5, n: int | None = None,
                                  M: int = 1000, knots: str = "auto", refine: bool = True,
                                  penalized: bool = False, max_iter: int = 200,
                                  tol: float = 1e-12,
                                  starts: tuple[str, ...] = ("chord", "centripetal", "uniform"),
                                  ) -> tuple[SplineModel, FitReport]:
    """Fit a closed cubic B-spline to an ordered contour.

    ``n`` fixes the control-point count; otherwise the smallest count whose
    residual meets the budget ``alpha_smooth * N`` is used. ``penalized``
    additionally spends the remaining budget on a second-difference penalty.

    Geometric refinement is non-convex, so it is started from each
    parameterization named in ``starts`` and the lowest residual wins
    (ties go to the earliest, chord length by default).
    """
    D = _as_points(points)
    N = D.shape[0]
    if N < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points, got {N}")
    if alpha_smooth < 0:
        raise ValueError("smoothing factor must be non-negative")
    t_starts = [PARAM_STARTS[k](D) for k in starts]
    t0 = t_starts[0]
    budget = alpha_smooth * N

    if n is not None:
        if not (DEGREE + 1 <= n <= N):
            raise ValueError(f"control-point count must lie in [4, {N}]")
        model, t, cond, it = _fit_fixed(D, t_starts, n, knots, refine, max_iter, tol)
    else:
        cache = {}

        def trial(k):
            if k not in cache:
                try:
                    cache[k] = _fit_fixed(D, t_starts, k, knots, refine, max_iter, tol)
                except IllConditionedError:
                    # Some span holds no data at this count; keep searching upward.
                    cache[k] = None
            if cache[k] is None:
                return False
            m, tt, _, _ = cache[k]
            return _sse(m, D, tt) <= budget

        lo = MIN_POINTS
        if trial(lo):
            k = lo
        else:
            hi = lo
            while hi < N and not trial(hi):
                lo = hi
                hi = min(2 * hi, N)
            if not trial(hi):
                hi = N
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if trial(mid):
                    hi = mid
                else:
                    lo = mid
            k = hi
            trial(k)
        model, t, cond, it = cache[k]
        n = k
        log.debug("selected n=%d control points for N=%d, budget %.4g", n, N, budget)

    if penalized and budget > 0:
        model, cond = _penalize(D, t, model, budget)

    sse = _sse(model, D, t)
    rep = fit_error(D, model.resample(M))
    e = np.linalg.norm(model.evaluate(t) - D, axis=1)
    rms = math.sqrt(float(np.mean(e * e)))
    return model, FitReport(e=e, rms=rms, N=N, n=n, M=M, alpha_smooth=alpha_smooth,
                            p95=float(np.percentile(e, 95)), sse=sse, budget=budget,
                            rms_resample=rep.rms, condition=cond, iterations=it)


def _penalize(D, t, model: SplineModel, budget: float):
    B = model.basis_matrix(t)
    R = _periodic_second_difference(model.n)
    sse0 = _sse(model, D, t)
    if sse0 >= budget:
        return model, float(np.linalg.cond(B.T @ B))
    lo, hi = -12.0, 12.0
    best = (model, float(np.linalg.cond(B.T @ B)))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        P, cond = _lsq(B, D, R, 10.0 ** mid)
        cand = SplineModel(P, model.knots)
        if _sse(cand, D, t) <= budget:
            best = (cand, cond)
            lo = mid
        else:
            hi = mid
    return best


def fit_error(points, dense_curve) -> FitReport:
    """Nearest-neighbour distance from each point to a sampled curve."""
    D = _as_points(points)
    C = _as_points(dense_curve) if len(dense_curve) else None
    if C is None or C.shape[0] == 0:
        raise ValueError("dense curve must be non-empty")
    e, _ = cKDTree(C).query(D)
    rms = math.sqrt(float(np.mean(e * e)))
    return FitReport(e=e, rms=rms, N=D.shape[0], n=0, M=C.shape[0], alpha_smooth=math.nan,
                     p95=float(np.percentile(e, 95)))


# ---------------------------------------------------------------- published model

# Control points (px) of the published forewing contour model.
FOREWING_CONTROL_POINTS = np.array([
    (312.908971, -210.627073), (256.030813, -211.484444), (187.390279, -184.698024),
    (95.897335, -120.190052), (43.167102, -65.320731), (4.851825, -16.166765),
    (-2.349460, 10.755896), (21.089190, 29.768771), (63.968615, 36.324384),
    (118.976443, 44.915320), (147.655635, 48.477453), (176.467499, 51.938866),
    (220.083362, 52.401279), (263.699226, 52.863692), (307.315090, 53.326105),
    (338.611816, 41.334592), (349.589403, 11.000153), (340.247852, -29.334286),
    (310.587162, -69.668725), (260.607334, -110.003164), (190.308367, -150.337603),
    (99.690262, -190.672042),
])
# Reported fit configuration for that contour.
FOREWING_FIT = {"N": 477, "n": 22, "alpha": 0.5, "M": 1000, "rms_px": 0.672,
                "reduction_pct": 95.4}


def forewing_model() -> SplineModel:
    return SplineModel.uniform(FOREWING_CONTROL_POINTS)


# ---------------------------------------------------------------- morphometrics

@dataclass(frozen=True)
class MorphoConfig:
    m: float = 0.026
    b: float = 0.60
    S: float = 54916.8e-6
    c_bar: float = 0.0886
    V: float = 1.03
    f: float = 10.0
    nu: float = 1.63e-5
    g: float = 9.81

    def __post_init__(self):
        for k in ("m", "b", "S", "c_bar", "V", "f", "nu", "g"):
            v = getattr(self, k)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{k} must be positive, got {v}")


@dataclass(frozen=True)
class Morphometrics:
    AR: float
    WL: float
    Re: float
    k: float
    U: float

    def reduced_frequency(self, cfg: MorphoConfig, U: float) -> float:
        return reduced_frequency(cfg, U)


def reduced_frequency(cfg: MorphoConfig, U: float) -> float:
    if not U > 0:
        raise ValueError("reference speed must be positive")
    return 2.0 * math.pi * cfg.f * cfg.c_bar / (2.0 * U)


def morphometrics(cfg: MorphoConfig, U: float | None = None) -> Morphometrics:
    U = cfg.V if U is None else U
    return Morphometrics(
        AR=cfg.b ** 2 / (2.0 * cfg.S),
        WL=cfg.m * cfg.g / (2.0 * cfg.S),
        Re=cfg.V * cfg.c_bar / cfg.nu,
        k=reduced_frequency(cfg, U),
        U=U,
    )


def write_metrics_report(path, cfg: MorphoConfig, res: Morphometrics) -> None:
    lines = [f"{k} = {getattr(cfg, k)!r}" for k in ("m", "b", "S", "c_bar", "V", "f", "nu", "g")]
    lines += [f"AR = {res.AR:.2f}", f"WL = {res.WL:.2f} N/m^2", f"Re = {res.Re:.0f}",
              f"k = {res.k:.2f}", f"U = {res.U!r} m/s"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_contour_csv(path) -> np.ndarray:
    from .io import read_csv_columns

    c = read_csv_columns(path, required=("x", "y"))
    return np.column_stack([c["x"], c["y"]])


def write_control_points_csv(path, model: SplineModel) -> None:
    from .io import write_columns

    P = model.control_points
    write_columns(path, ("i", "x", "y", "knot"),
                  [np.arange(1, model.n + 1), P[:, 0], P[:, 1], model.knots])
