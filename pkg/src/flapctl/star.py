"""Continuous-time stroke-timing asymmetry rhythm (STAR) generator.

The phase ``omega`` advances at ``pi*f/p(omega)`` with
``p = 0.5 + A*cos(omega)``. Integrating once gives the invariant
``0.5*omega + A*sin(omega) = pi*f*t + C``, so a full cycle always takes
``1/f`` while the downstroke (``omega`` in [-pi/2, pi/2]) and the upstroke
split that period unevenly.

When ``A`` varies in time the extended (drift-compensated) dynamics add
``-A_dot*sin(omega)`` to the numerator, which keeps the invariant exact and
therefore leaves no residual phase offset once ``A`` returns to zero.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import njit
from .errors import AdmissibilityError, IntegrationFault, ModulationRateError

A_MAX = 0.49
A_LIMIT = 0.5
# Phase origin sits at mid-downstroke.
DOWNSTROKE = (-math.pi / 2.0, math.pi / 2.0)
UPSTROKE = (math.pi / 2.0, 3.0 * math.pi / 2.0)

# Kernel status codes.
_OK = 0
_BAD_A = 1
_BAD_RATE = 2
_NONFINITE = 3


class Variant(str, enum.Enum):
    COSINE = "cosine"
    SINE = "sine"

    @property
    def code(self) -> int:
        return 0 if self is Variant.COSINE else 1


def _variant(v) -> Variant:
    return v if isinstance(v, Variant) else Variant(str(v).lower())


def check_admissible(A, bound: float = A_LIMIT, strict: bool = True) -> None:
    a = np.abs(np.asarray(A, dtype=float))
    bad = (a >= bound) if strict else (a > bound)
    if np.any(bad) or not np.all(np.isfinite(a)):
        worst = float(np.max(a))
        rel = "<" if strict else "<="
        raise AdmissibilityError(
            f"stroke-timing asymmetry |A|={worst:g} violates |A| {rel} {bound:g}"
        )


@dataclass(frozen=True)
class StarParams:
    f: float
    A: float = 0.0
    variant: Variant = Variant.COSINE
    extended: bool = False

    def __post_init__(self):
        if not (self.f > 0 and math.isfinite(self.f)):
            raise ValueError(f"flapping frequency must be positive, got {self.f}")
        check_admissible(self.A, A_MAX, strict=False)
        object.__setattr__(self, "variant", _variant(self.variant))


@dataclass(frozen=True)
class PhaseState:
    omega: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class AsymmetrySchedule:
    """Piecewise-linear A(t) through the knots ``(times, values)``.

    Outside the knot range A is held at the end values with zero rate.
    """

    f: float
    times: np.ndarray
    values: np.ndarray
    variant: Variant = Variant.COSINE
    extended: bool = False
    _tk: np.ndarray = field(init=False, repr=False, compare=False)
    _ak: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64).ravel()
        a = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if t.size == 0 or t.size != a.size:
            raise ValueError("times and values must be non-empty and equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        if not (self.f > 0):
            raise ValueError("flapping frequency must be positive")
        object.__setattr__(self, "_tk", t)
        object.__setattr__(self, "_ak", a)
        object.__setattr__(self, "variant", _variant(self.variant))

    @classmethod
    def constant(cls, params: StarParams) -> "AsymmetrySchedule":
        return cls(params.f, np.array([0.0]), np.array([params.A]),
                   params.variant, params.extended)

    @classmethod
    def trapezoid(cls, f: float, peak: float, cycles: float = 5.0,
                  ramp_cycles: float = 1.0, lead_cycles: float = 1.0,
                  variant=Variant.COSINE, extended: bool = False) -> "AsymmetrySchedule":
        """Pulse lasting ``cycles`` periods with linear ramps, zero outside."""
        T = 1.0 / f
        t0 = lead_cycles * T
        r = ramp_cycles * T
        t3 = t0 + cycles * T
        times = np.array([0.0, t0, t0 + r, t3 - r, t3])
        values = np.array([0.0, 0.0, peak, peak, 0.0])
        return cls(f, times, values, variant, extended)

    @property
    def end_time(self) -> float:
        return float(self._tk[-1])

    def A_at(self, t):
        return np.interp(t, self._tk, self._ak)

    def negated(self) -> "AsymmetrySchedule":
        return AsymmetrySchedule(self.f, self._tk, -self._ak, self.variant, self.extended)


def modulation_fn(A, omega, variant=Variant.COSINE):
    check_admissible(A)
    if _variant(variant) is Variant.COSINE:
        return 0.5 + A * np.cos(omega)
    return 0.5 + A * np.sin(omega)


def phase_rate(params: StarParams, omega, A_dot: float = 0.0):
    A = params.A
    p = modulation_fn(A, omega, params.variant)
    num = math.pi * params.f
    if params.extended:
        if not math.isfinite(A_dot):
            raise ValueError("A_dot must be finite")
        if params.variant is Variant.COSINE:
            num = num - A_dot * np.sin(omega)
        else:
            num = num + A_dot * np.cos(omega)
        if np.any(np.asarray(num) <= 0.0):
            raise ModulationRateError(
                f"extended phase-rate numerator is non-positive (A_dot={A_dot:g} "
                f"too fast for f={params.f:g})"
            )
    return num / p


def half_stroke_durations(f: float, A: float) -> tuple[float, float]:
    check_admissible(A)
    half = 1.0 / (2.0 * f)
    skew = 2.0 * A / (math.pi * f)
    return half + skew, half - skew


def phase_speed_bounds(f: float, A: float) -> tuple[float, float]:
    check_admissible(A)
    a = abs(A)
    return math.pi * f / (0.5 + a), math.pi * f / (0.5 - a)


# ---------------------------------------------------------------- kernels

@njit
def _sched(t, tk, ak):
    n = tk.shape[0]
    if n == 1 or t <= tk[0]:
        return ak[0], 0.0
    if t >= tk[n - 1]:
        return ak[n - 1], 0.0
    j = np.searchsorted(tk, t, side="right") - 1
    slope = (ak[j + 1] - ak[j]) / (tk[j + 1] - tk[j])
    return ak[j] + slope * (t - tk[j]), slope


@njit
def _rate(t, om, f, tk, ak, vcode, ext):
    """Phase rate, p and a status code at (t, omega)."""
    A, Ad = _sched(t, tk, ak)
    if abs(A) > A_MAX + 1e-12:
        return 0.0, 0.0, _BAD_A
    if vcode == 0:
        p = 0.5 + A * math.cos(om)
    else:
        p = 0.5 + A * math.sin(om)
    num = math.pi * f
    if ext:
        if vcode == 0:
            num -= Ad * math.sin(om)
        else:
            num += Ad * math.cos(om)
        if num <= 0.0:
            return 0.0, p, _BAD_RATE
    return num / p, p, _OK


@njit
def _rk4_step(t, om, h, f, tk, ak, vcode, ext):
    k1, _, s1 = _rate(t, om, f, tk, ak, vcode, ext)
    k2, _, s2 = _rate(t + 0.5 * h, om + 0.5 * h * k1, f, tk, ak, vcode, ext)
    k3, _, s3 = _rate(t + 0.5 * h, om + 0.5 * h * k2, f, tk, ak, vcode, ext)
    k4, _, s4 = _rate(t + h, om + h * k3, f, tk, ak, vcode, ext)
    s = max(max(s1, s2), max(s3, s4))
    return om + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0, s


@njit
def _rk4_trajectory(om0, t0, dt, steps, stride, f, tk, ak, vcode, ext):
    nrec = steps // stride + 1
    ts = np.empty(nrec)
    oms = np.empty(nrec)
    rates = np.empty(nrec)
    ps = np.empty(nrec)
    om = om0
    r, p, s = _rate(t0, om, f, tk, ak, vcode, ext)
    if s != _OK:
        return ts[:0], oms[:0], rates[:0], ps[:0], s, t0
    ts[0] = t0
    oms[0] = om
    rates[0] = r
    ps[0] = p
    k = 1
    for i in range(steps):
        t = t0 + i * dt
        om, s = _rk4_step(t, om, dt, f, tk, ak, vcode, ext)
        if s != _OK:
            return ts[:k], oms[:k], rates[:k], ps[:k], s, t
        if not math.isfinite(om):
            return ts[:k], oms[:k], rates[:k], ps[:k], _NONFINITE, t
        if (i + 1) % stride == 0:
            tn = t0 + (i + 1) * dt
            r, p, s = _rate(tn, om, f, tk, ak, vcode, ext)
            ts[k] = tn
            oms[k] = om
            rates[k] = r
            ps[k] = p
            k += 1
    return ts[:k], oms[:k], rates[:k], ps[:k], _OK, t0 + steps * dt


@njit
def _rk4_crossings(om0, t0, dt, levels, max_steps, f, tk, ak, vcode, ext):
    """Times at which omega first reaches each (increasing) level.

    Within the step that brackets a level, the substep length is found by
    bisection so the crossing is resolved to the integrator's own accuracy.
    """
    out = np.full(levels.shape[0], np.nan)
    j = 0
    om = om0
    t = t0
    nlev = levels.shape[0]
    for i in range(max_steps):
        if j >= nlev:
            break
        t = t0 + i * dt
        nxt, s = _rk4_step(t, om, dt, f, tk, ak, vcode, ext)
        if s != _OK:
            return out, s, t
        while j < nlev and nxt >= levels[j]:
            lo = 0.0
            hi = dt
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                v, _s = _rk4_step(t, om, mid, f, tk, ak, vcode, ext)
                if v < levels[j]:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-18 * max(1.0, t):
                    break
            out[j] = t + 0.5 * (lo + hi)
            j += 1
        om = nxt
    return out, _OK, t


# ---------------------------------------------------------------- wrappers

def _as_schedule(params_of_t) -> AsymmetrySchedule:
    if isinstance(params_of_t, AsymmetrySchedule):
        return params_of_t
    if isinstance(params_of_t, StarParams):
        return AsymmetrySchedule.constant(params_of_t)
    raise TypeError("expected StarParams or AsymmetrySchedule")


def _raise_status(status: int, t: float, sched: AsymmetrySchedule) -> None:
    if status == _BAD_A:
        raise AdmissibilityError(
            f"inadmissible A={float(sched.A_at(t)):g} encountered near t={t:.9g} s "
            f"(|A| must stay <= {A_MAX})"
        )
    if status == _BAD_RATE:
        raise ModulationRateError(
            f"extended phase-rate numerator non-positive near t={t:.9g} s"
        )
    if status == _NONFINITE:
        raise IntegrationFault(f"non-finite phase near t={t:.9g} s")


def _check_schedule(sched: AsymmetrySchedule) -> None:
    over = np.abs(sched._ak) > A_MAX + 1e-12
    if np.any(over):
        t_bad = float(sched._tk[np.argmax(over)])
        # Walk back along the segment to the first offending instant.
        k = int(np.argmax(over))
        if k > 0:
            a0, a1 = sched._ak[k - 1], sched._ak[k]
            t0, t1 = sched._tk[k - 1], sched._tk[k]
            target = math.copysign(A_MAX, a1)
            t_bad = float(t0 + (target - a0) / (a1 - a0) * (t1 - t0))
        raise AdmissibilityError(
            f"inadmissible A={float(sched._ak[k]):g} in schedule; |A| exceeds "
            f"{A_MAX} from t={t_bad:.9g} s"
        )


def integrate_phase(state: PhaseState, params_of_t, dt: float, steps: int) -> PhaseState:
    sched = _as_schedule(params_of_t)
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_schedule(sched)
    _, oms, _, _, status, tfail = _rk4_trajectory(
        float(state.omega), float(state.t), float(dt), int(steps), max(int(steps), 1),
        float(sched.f), sched._tk, sched._ak, sched.variant.code, bool(sched.extended))
    _raise_status(status, tfail, sched)
    return PhaseState(float(oms[-1]), float(state.t + steps * dt))


@dataclass
class Trajectory:
    t: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray
    p: np.ndarray

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self)


def trajectory(state: PhaseState, params_of_t, dt: float, steps: int,
               stride: int = 1) -> Trajectory:
    sched = _as_schedule(params_of_t)
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_schedule(sched)
    ts, oms, rates, ps, status, tfail = _rk4_trajectory(
        float(state.omega), float(state.t), float(dt), int(steps), int(stride),
        float(sched.f), sched._tk, sched._ak, sched.variant.code, bool(sched.extended))
    _raise_status(status, tfail, sched)
    return Trajectory(ts, oms, rates, ps)


def crossing_times(state: PhaseState, params_of_t, levels, dt: float = 1e-5,
                   max_time: float | None = None) -> np.ndarray:
    """First-passage times of the phase through each of ``levels``."""
    sched = _as_schedule(params_of_t)
    _check_schedule(sched)
    lv = np.ascontiguousarray(levels, dtype=np.float64)
    if np.any(np.diff(lv) <= 0) or lv[0] <= state.omega:
        raise ValueError("levels must be increasing and above the initial phase")
    if max_time is None:
        # Slowest admissible speed is pi*f/0.99; allow a generous margin.
        max_time = 2.0 * (lv[-1] - state.omega) / (math.pi * sched.f) + 1.0 / sched.f
    max_steps = int(math.ceil(max_time / dt))
    out, status, tfail = _rk4_crossings(
        float(state.omega), float(state.t), float(dt), lv, max_steps,
        float(sched.f), sched._tk, sched._ak, sched.variant.code, bool(sched.extended))
    _raise_status(status, tfail, sched)
    return out


def measured_half_strokes(f: float, A: float, dt: float = 1e-5) -> tuple[float, float]:
    """Half-stroke durations timed from integrated reversal crossings."""
    params = StarParams(f, A)
    lo, hi = DOWNSTROKE
    t = crossing_times(PhaseState(lo, 0.0), params, [hi, hi + math.pi], dt)
    return float(t[0]), float(t[1] - t[0])


@dataclass
class ResidualTrace:
    t: np.ndarray
    delta: np.ndarray


def phase_difference_residual(A_pulse: AsymmetrySchedule, variant=None,
                              extended: bool | None = None, dt: float = 1e-5,
                              trace: bool = False, tail: float = 0.0):
    """Phase difference left between two wings driven by +A(t) and -A(t)."""
    sched = A_pulse
    if variant is not None or extended is not None:
        sched = AsymmetrySchedule(
            sched.f, sched._tk, sched._ak,
            sched.variant if variant is None else variant,
            sched.extended if extended is None else extended)
    if abs(sched._ak[0]) > 0 or abs(sched._ak[-1]) > 0:
        raise ValueError("pulse must start and end at A = 0")
    steps = int(math.ceil((sched.end_time + tail) / dt))
    left = trajectory(PhaseState(0.0, 0.0), sched, dt, steps)
    right = trajectory(PhaseState(0.0, 0.0), sched.negated(), dt, steps)
    delta = left.omega - right.omega
    if trace:
        return float(delta[-1]), ResidualTrace(left.t, delta)
    return float(delta[-1])


def measured_frequency(t: np.ndarray, omega: np.ndarray) -> float:
    """Mean cycle rate from the first to the last 2*pi crossing (interpolated)."""
    om = np.asarray(omega, dtype=float)
    k0 = int(math.ceil(om[0] / (2 * math.pi)))
    k1 = int(math.floor(om[-1] / (2 * math.pi)))
    if k1 - k0 < 1:
        raise ValueError("trajectory spans less than one full cycle")
    levels = 2 * math.pi * np.array([k0, k1], dtype=float)
    tc = np.interp(levels, om, t)
    return (k1 - k0) / float(tc[1] - tc[0])


def write_trajectory_csv(path, traj: Trajectory) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "omega", "omega_dot", "p"])
        for row in zip(traj.t, traj.omega, traj.omega_dot, traj.p):
            w.writerow([repr(float(v)) for v in row])
