"""Force-torque bench processing: detect, filter, segment, average, subtract.

Cycles run from one stroke maximum to the next. Boundaries are located on
the stroke signal with sub-sample accuracy, and each cycle is resampled onto
a shared normalized-time grid before averaging, so cycles of unequal length
line up phase for phase.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import signal as sps

from .errors import AliasingError, NoCyclesError

log = logging.getLogger(__name__)

DEFAULT_GRID = 200
SWEEP_CYCLES = 80
SWEEP_KEEP = 40
BENCH_COLUMNS = ("t", "Fx", "Fy", "Fz", "Mx", "My", "Mz", "pwm_L", "pwm_R")
FT_COLUMNS = ("Fx", "Fy", "Fz", "Mx", "My", "Mz")


class SweepWarning(UserWarning):
    pass


@dataclass
class BenchRecord:
    t: np.ndarray
    F: np.ndarray
    M: np.ndarray
    pwm: np.ndarray
    markers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("bench timestamps must be strictly increasing")

    @property
    def fs(self) -> float:
        return 1.0 / float(np.median(np.diff(self.t)))

    @property
    def ft(self) -> np.ndarray:
        return np.hstack([self.F, self.M])

    def slice(self, sl: slice) -> "BenchRecord":
        return BenchRecord(self.t[sl], self.F[sl], self.M[sl], self.pwm[sl],
                           {k: v[sl] for k, v in self.markers.items()})


@dataclass(frozen=True)
class FilterSpec:
    order: int = 4
    cutoff: float = 50.0
    fs: float = 222.0

    def __post_init__(self):
        if self.cutoff <= 0 or self.order < 1:
            raise ValueError("filter order and cutoff must be positive")
        if self.cutoff >= self.fs / 2.0:
            raise AliasingError(
                f"cutoff {self.cutoff:g} Hz is not below Nyquist {self.fs / 2:g} Hz")


@dataclass(frozen=True)
class Window:
    start: int = 0
    stop: int = -1   # inclusive

    @property
    def empty(self) -> bool:
        return self.stop < self.start

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop + 1)


def detect_active(pwm, threshold: float = 20.0, debounce: int = 3,
                  idle: float = 1500.0) -> Window:
    """Span from the first to the last run of active samples lasting >= debounce."""
    x = np.asarray(pwm, dtype=float)
    if x.size == 0:
        raise ValueError("empty command series")
    dev = np.abs(x - idle)
    active = dev.max(axis=1) > threshold if dev.ndim == 2 else dev > threshold
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    keep = (stops - starts) >= debounce
    if not np.any(keep):
        return Window()
    return Window(int(starts[keep][0]), int(stops[keep][-1] - 1))


def butterworth_lowpass(x, spec: FilterSpec = FilterSpec(), zero_phase: bool = True):
    """Low-pass along axis 0; forward-backward by default (squared magnitude)."""
    sos = sps.butter(spec.order, spec.cutoff, btype="low", fs=spec.fs, output="sos")
    x = np.asarray(x, dtype=float)
    if zero_phase:
        return sps.sosfiltfilt(sos, x, axis=0)
    return sps.sosfilt(sos, x, axis=0)


def butterworth_magnitude(f, spec: FilterSpec = FilterSpec(), zero_phase: bool = True):
    """Analytic digital magnitude of the prewarped bilinear design."""
    ratio = np.tan(np.pi * np.asarray(f, float) / spec.fs) / np.tan(np.pi * spec.cutoff / spec.fs)
    h2 = 1.0 / (1.0 + ratio ** (2 * spec.order))
    return h2 if zero_phase else np.sqrt(h2)


@dataclass
class Segmentation:
    peaks: np.ndarray      # integer sample indices of stroke maxima
    refined: np.ndarray    # sub-sample positions (parabolic vertex)
    troughs: np.ndarray    # integer indices of minima between peaks

    @property
    def n_cycles(self) -> int:
        return max(self.refined.size - 1, 0)


def _extrema(x: np.ndarray) -> np.ndarray:
    d = np.diff(x)
    # Sign change + to -/0 of the first difference, curvature confirmed below.
    cand = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0)) + 1
    # Flat tops: step to the middle of the plateau.
    out = []
    for i in cand:
        j = i
        while j + 1 < x.size and x[j + 1] == x[i]:
            j += 1
        if j + 1 < x.size and x[j + 1] < x[i]:
            k = (i + j) // 2
            if x[k - 1] - 2 * x[k] + x[k + 1] < 0 or j > i:
                out.append(k)
    return np.array(out, dtype=int)


def _prominence(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    prom = np.empty(peaks.size)
    for n, i in enumerate(peaks):
        h = x[i]
        j = i - 1
        lmin = h
        while j >= 0 and x[j] <= h:
            lmin = min(lmin, x[j])
            j -= 1
        k = i + 1
        rmin = h
        while k < x.size and x[k] <= h:
            rmin = min(rmin, x[k])
            k += 1
        prom[n] = h - max(lmin, rmin)
    return prom


def segment_cycles(x, fs: float, prominence: float | None = None,
                   rel_prominence: float = 0.3) -> Segmentation:
    """Stroke maxima used as cycle boundaries (max-to-max cycles)."""
    x = np.asarray(x, dtype=float)
    span = float(np.ptp(x)) if x.size else 0.0
    if x.size < 5 or span == 0.0:
        raise NoCyclesError("stroke signal is constant; no reversals to segment")
    thr = rel_prominence * span if prominence is None else prominence
    pk = _extrema(x)
    if pk.size:
        pk = pk[_prominence(x, pk) >= thr]
    tr = _extrema(-x)
    if tr.size:
        tr = tr[_prominence(-x, tr) >= thr]
    if pk.size < 2:
        raise NoCyclesError(f"found {pk.size} stroke maxima; need at least two")
    a, b, c = x[pk - 1], x[pk], x[np.minimum(pk + 1, x.size - 1)]
    den = a - 2 * b + c
    off = np.where(den != 0, 0.5 * (a - c) / np.where(den != 0, den, 1.0), 0.0)
    refined = pk + np.clip(off, -0.5, 0.5)
    return Segmentation(pk, refined, tr)


@dataclass
class Cycle:
    tn: np.ndarray       # normalized time in [0, 1]
    values: np.ndarray   # (L, C)
    duration: float


def extract_cycles(y, seg: Segmentation, fs: float) -> list[Cycle]:
    """Cut a (N, C) signal at the refined boundaries, with interpolated ends."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    idx = np.arange(y.shape[0], dtype=float)
    out = []
    for b0, b1 in zip(seg.refined[:-1], seg.refined[1:]):
        inner = np.arange(math.floor(b0) + 1, math.ceil(b1))
        pos = np.concatenate([[b0], inner, [b1]])
        vals = np.column_stack([np.interp(pos, idx, y[:, c]) for c in range(y.shape[1])])
        out.append(Cycle((pos - b0) / (b1 - b0), vals, (b1 - b0) / fs))
    return out


@dataclass
class CycleProfile:
    grid: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n_cycles: int
    var_defined: bool = True
    duration: float = math.nan

    def __post_init__(self):
        g = self.grid
        if g.ndim != 1 or g.size < 2:
            raise ValueError("profile grid must be 1-D with at least two points")


def _resample(tn: np.ndarray, v: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.column_stack([np.interp(grid, tn, v[:, c]) for c in range(v.shape[1])])


def phase_lock_average(cycles: Sequence, n_grid: int = DEFAULT_GRID) -> CycleProfile:
    """Pointwise mean and sample variance of cycles on a uniform [0, 1] grid.

    Items are :class:`Cycle` objects or plain arrays assumed to span the
    cycle uniformly from 0 to 1.
    """
    if len(cycles) == 0:
        raise NoCyclesError("no cycles to average")
    grid = np.linspace(0.0, 1.0, n_grid)
    stack = []
    durs = []
    for c in cycles:
        if isinstance(c, Cycle):
            tn, v = c.tn, c.values
            durs.append(c.duration)
        else:
            v = np.asarray(c, dtype=float)
            v = v[:, None] if v.ndim == 1 else v
            tn = np.linspace(0.0, 1.0, v.shape[0])
        stack.append(_resample(tn, v, grid))
    S = np.stack(stack)
    K = S.shape[0]
    mean = S.mean(axis=0)
    if K < 2:
        log.warning("single cycle: variance undefined")
        var = np.full_like(mean, np.nan)
    else:
        var = S.var(axis=0, ddof=1)
    dur = float(np.mean(durs)) if durs else math.nan
    return CycleProfile(grid, mean, var, K, K >= 2, dur)


def subtract_inertial(intact: CycleProfile, perforated: CycleProfile,
                      grid_tol: float = 1e-9) -> CycleProfile:
    """Aerodynamic part = intact minus perforated; variances add."""
    if intact.mean.shape[1] != perforated.mean.shape[1]:
        raise ValueError("profiles carry different component sets")
    for p in (intact, perforated):
        if abs(p.grid[0]) > grid_tol or abs(p.grid[-1] - 1.0) > grid_tol:
            raise ValueError("profile grid must span the normalized cycle [0, 1]")
    pm, pv = perforated.mean, perforated.var
    if intact.grid.shape != perforated.grid.shape or \
            np.max(np.abs(intact.grid - perforated.grid)) > grid_tol:
        pm = _resample(perforated.grid, pm, intact.grid)
        pv = _resample(perforated.grid, pv, intact.grid)
    return CycleProfile(intact.grid, intact.mean - pm, intact.var + pv,
                        min(intact.n_cycles, perforated.n_cycles),
                        intact.var_defined and perforated.var_defined, intact.duration)


def integrate_impulse(profile: CycleProfile, T_cycle: float) -> dict[str, np.ndarray]:
    t = profile.grid * T_cycle
    m = profile.mean
    return {"signed": np.trapezoid(m, t, axis=0),
            "absolute": np.trapezoid(np.abs(m), t, axis=0)}


def polar_profile(profile: CycleProfile, component: int | None = None):
    v = profile.mean if component is None else profile.mean[:, component]
    theta = 2.0 * np.pi * profile.grid
    offset = np.maximum(0.0, -np.min(v, axis=0))
    return theta, v + offset


# ---------------------------------------------------------------- bending

def _direction(pts: np.ndarray) -> np.ndarray:
    """Principal direction of a marker set, oriented first-to-last."""
    c = pts - pts.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    d = vt[0]
    if np.dot(pts[-1] - pts[0], d) < 0:
        d = -d
    return d, s[0]


@dataclass
class BendingResult:
    angle: np.ndarray          # deg per frame (nan where flagged)
    flagged: np.ndarray
    max_down: float = math.nan
    max_up: float = math.nan


def bending_angle(proximal, distal, axis, stroke=None, tol: float = 1e-12) -> BendingResult:
    """In-plane angle between proximal and distal marker segments.

    ``proximal`` and ``distal`` are (frames, markers, 3). Markers are projected
    onto the plane orthogonal to ``axis``. If a stroke-angle series is given,
    maxima are split by stroke direction: rising stroke angle is the first
    half-stroke (downstroke in the phase convention), falling is the second.
    """
    P = np.asarray(proximal, dtype=float)
    D = np.asarray(distal, dtype=float)
    if P.ndim == 2:
        P, D = P[None], D[None]
    if P.shape[1] < 2 or D.shape[1] < 2:
        raise ValueError("need at least two markers per segment")
    a = np.asarray(axis, dtype=float)
    na = np.linalg.norm(a)
    if not na > 0:
        raise ValueError("rotation axis is degenerate")
    a = a / na
    proj = np.eye(3) - np.outer(a, a)
    n = P.shape[0]
    ang = np.full(n, np.nan)
    flag = np.zeros(n, dtype=bool)
    for k in range(n):
        pp = P[k] @ proj
        dd = D[k] @ proj
        (u, su), (v, sv) = _direction(pp), _direction(dd)
        if su <= tol or sv <= tol:
            flag[k] = True
            continue
        ang[k] = math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v))))
    res = BendingResult(ang, flag)
    if stroke is not None:
        s = np.asarray(stroke, dtype=float)
        rising = np.gradient(s) > 0
        down = ang[rising & ~flag]
        up = ang[~rising & ~flag]
        res.max_down = float(np.max(down)) if down.size else math.nan
        res.max_up = float(np.max(up)) if up.size else math.nan
    return res


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepStat:
    mean: np.ndarray
    std: np.ndarray
    n_used: int
    n_total: int


def select_middle(n: int) -> slice:
    if n < 4:
        raise NoCyclesError(f"only {n} cycles; at least 4 are required")
    if n >= SWEEP_CYCLES:
        keep = SWEEP_KEEP
    else:
        keep = n // 2
        warnings.warn(f"{n} cycles < {SWEEP_CYCLES}; using the middle {keep}", SweepWarning,
                      stacklevel=3)
    start = (n - keep) // 2
    return slice(start, start + keep)


def modulation_sweep_stats(runs: Mapping[object, Sequence]) -> dict[object, SweepStat]:
    """Per setting: mean and std (ddof=1) of cycle-averaged force/torque."""
    out = {}
    for key, cycles in runs.items():
        sl = select_middle(len(cycles))
        avgs = []
        for c in list(cycles)[sl]:
            if isinstance(c, Cycle):
                v = c.values
                avgs.append(np.trapezoid(v, c.tn, axis=0))
            else:
                avgs.append(np.asarray(c, dtype=float).mean(axis=0))
        A = np.array(avgs)
        out[key] = SweepStat(A.mean(axis=0), A.std(axis=0, ddof=1), A.shape[0], len(cycles))
    return out


# ---------------------------------------------------------------- pipeline

@dataclass
class BenchResult:
    intact: CycleProfile
    perforated: CycleProfile
    aero: CycleProfile
    impulse: dict
    T_cycle: float


def stroke_signal(rec: BenchRecord, wing: int = 0, calib_center: float = 1500.0,
                  us_per_deg: float = 10.0) -> np.ndarray:
    return (rec.pwm[:, wing] - calib_center) / us_per_deg


def record_cycles(rec: BenchRecord, spec: FilterSpec | None = None, threshold: float = 20.0,
                  debounce: int = 3) -> list[Cycle]:
    """Detect, filter and segment one recording into force/torque cycles."""
    win = detect_active(rec.pwm, threshold, debounce)
    if win.empty:
        raise NoCyclesError("no actuator activity detected")
    r = rec.slice(win.slice)
    spec = spec or FilterSpec(fs=r.fs)
    ft = butterworth_lowpass(r.ft, spec)
    stroke = butterworth_lowpass(stroke_signal(r), spec)
    seg = segment_cycles(stroke, spec.fs)
    cyc = extract_cycles(ft, seg, spec.fs)
    # Drop the partial cycles at the activation edges.
    return cyc[1:-1] if len(cyc) > 4 else cyc


def profile_record(rec: BenchRecord, spec: FilterSpec | None = None, n_grid: int = DEFAULT_GRID,
                   threshold: float = 20.0, debounce: int = 3) -> CycleProfile:
    return phase_lock_average(record_cycles(rec, spec, threshold, debounce), n_grid)


def analyze(intact: BenchRecord, perforated: BenchRecord, spec: FilterSpec | None = None,
            n_grid: int = DEFAULT_GRID, threshold: float = 20.0, debounce: int = 3) -> BenchResult:
    pi = profile_record(intact, spec, n_grid, threshold, debounce)
    pp = profile_record(perforated, spec, n_grid, threshold, debounce)
    aero = subtract_inertial(pi, pp)
    T = pi.duration
    return BenchResult(pi, pp, aero, integrate_impulse(aero, T), T)


def read_bench_csv(path) -> BenchRecord:
    from .io import read_csv_columns

    c = read_csv_columns(path, required=BENCH_COLUMNS)
    F = np.column_stack([c["Fx"], c["Fy"], c["Fz"]])
    M = np.column_stack([c["Mx"], c["My"], c["Mz"]])
    pwm = np.column_stack([c["pwm_L"], c["pwm_R"]])
    markers = {k: v for k, v in c.items() if k not in BENCH_COLUMNS}
    return BenchRecord(c["t"], F, M, pwm, markers)


def write_bench_csv(path, rec: BenchRecord) -> None:
    from .io import write_columns

    cols = [rec.t, *rec.F.T, *rec.M.T, *rec.pwm.T]
    write_columns(path, BENCH_COLUMNS, cols)


def write_profile_csv(path, prof: CycleProfile, names=FT_COLUMNS) -> None:
    from .io import write_columns

    cols = [prof.grid]
    header = ["t_norm"]
    for i, nm in enumerate(names):
        cols += [prof.mean[:, i], prof.var[:, i]]
        header += [f"{nm}_mean", f"{nm}_var"]
    write_columns(path, header, cols)


def write_polar_csv(path, prof: CycleProfile, names=FT_COLUMNS) -> None:
    from .io import write_columns

    theta, radial = polar_profile(prof)
    write_columns(path, ["theta", *[f"{n}_r" for n in names]], [theta, *radial.T])


def write_sweep_csv(path, stats: dict, names=FT_COLUMNS) -> None:
    from .io import write_rows

    header = ["setting", "n_used", "n_total"] + [f"{n}_mean" for n in names] + \
        [f"{n}_std" for n in names]
    rows = [[k, v.n_used, v.n_total, *v.mean, *v.std] for k, v in stats.items()]
    write_rows(path, header, rows)


def write_impulse_csv(path, impulse: dict, names=FT_COLUMNS) -> None:
    from .io import write_rows

    write_rows(path, ["component", "signed", "absolute"],
               [[n, impulse["signed"][i], impulse["absolute"][i]] for i, n in enumerate(names)])
