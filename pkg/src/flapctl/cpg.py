"""Servo-rate wing oscillator driven by the STAR phase law.

Each tick the oscillator advances a reference phase exactly under the STAR
law with A held over the tick, converts that advance into a reciprocal rate
``r = 1/p`` averaged over the tick, low-passes ``r`` with a one-pole IIR and
integrates the smoothed rate into the output phase. Because the filter is
linear in ``r`` the long-run sum of smoothed rates equals the sum of targets,
so the mean flapping frequency is preserved. The stroke angle is
``y = zeta*sin(omega) + delta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._accel import njit
from .errors import AliasingError, ConfigError
from .star import A_MAX, check_admissible

MODE_RECIPROCAL = 0
MODE_P_FILTER = 1
MODE_LITERAL = 2

DEFAULT_MECH_LIMIT = 80.0


def alpha_from_cutoff(f_c: float, f_servo: float) -> float:
    if not f_c > 0:
        raise ValueError("cutoff must be positive (alpha = 0 freezes the filter)")
    if f_c >= f_servo / 2.0:
        raise AliasingError(
            f"cutoff {f_c:g} Hz is not below the Nyquist limit {f_servo / 2:g} Hz"
        )
    a = 2.0 * math.pi * f_c / f_servo
    return min(max(a, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class WingbeatParams:
    zeta: float = 40.0
    f: float = 10.0
    delta: float = 0.0
    A: float = 0.0
    mech_limit: float = DEFAULT_MECH_LIMIT

    def __post_init__(self):
        if not self.zeta > 0:
            raise ConfigError("stroke amplitude zeta must be positive")
        if not self.f > 0:
            raise ConfigError("flapping frequency must be positive")
        check_admissible(self.A, A_MAX, strict=False)
        if abs(self.delta) + self.zeta > self.mech_limit + 1e-12:
            raise ConfigError(
                f"|delta| + zeta = {abs(self.delta) + self.zeta:g} deg exceeds the "
                f"mechanical limit {self.mech_limit:g} deg"
            )


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float
    f_servo: float = 100.0
    f_c: float = 2.0
    delta_slew: float = 200.0  # deg/s

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"IIR weight alpha must lie in (0, 1], got {self.alpha}")
        if not self.f_servo > 0:
            raise ConfigError("servo rate must be positive")
        if not self.delta_slew > 0:
            raise ConfigError("offset slew limit must be positive")

    @classmethod
    def from_cutoff(cls, f_c: float = 2.0, f_servo: float = 100.0,
                    delta_slew: float = 200.0) -> "SmoothingConfig":
        return cls(alpha_from_cutoff(f_c, f_servo), f_servo, f_c, delta_slew)

    @classmethod
    def unfiltered(cls, f_servo: float = 100.0) -> "SmoothingConfig":
        return cls(1.0, f_servo, f_servo / 2.0)

    def check_against(self, f: float) -> None:
        if self.alpha < 1.0 and not self.f_c < f:
            raise ConfigError(f"cutoff {self.f_c:g} Hz must lie below flapping frequency {f:g} Hz")


@dataclass(frozen=True)
class OscState:
    omega: float
    r_smooth: float
    y: float
    omega_ref: float
    A_prev: float
    debt: float = 0.0
    delta: float = 0.0

    @classmethod
    def initial(cls, params: WingbeatParams, cfg: SmoothingConfig,
                omega0: float = 0.0, extended: bool = True) -> "OscState":
        step = math.pi * params.f / cfg.f_servo
        d = _advance(omega0, params.A, step)
        r0 = d / step
        return cls(omega0, r0, params.zeta * math.sin(omega0) + params.delta,
                   omega0, params.A, 0.0, params.delta)


# ---------------------------------------------------------------- kernels

@njit
def _advance(om, A, dF):
    """Phase increment d > 0 with 0.5*d + A*(sin(om+d) - sin(om)) = dF."""
    s0 = math.sin(om)
    lo = max(0.0, 2.0 * (dF - 2.0 * abs(A)))
    hi = 2.0 * (dF + 2.0 * abs(A))
    d = dF / (0.5 + A * math.cos(om))
    if d <= lo or d >= hi:
        d = 0.5 * (lo + hi)
    for _ in range(60):
        g = 0.5 * d + A * (math.sin(om + d) - s0) - dF
        if g > 0.0:
            hi = d
        else:
            lo = d
        dg = 0.5 + A * math.cos(om + d)
        nd = d - g / dg
        if nd <= lo or nd >= hi:
            nd = 0.5 * (lo + hi)
        if abs(nd - d) <= 1e-15 * max(1.0, d):
            d = nd
            break
        d = nd
    return d


@njit
def _tick(omega, r_s, om_ref, A_prev, debt, delta_applied,
          A, delta_cmd, zeta, f, fs, alpha, ext, mode, slew_step):
    step = math.pi * f / fs
    if mode == MODE_LITERAL:
        r_t = 1.0 / (0.5 + A * math.cos(omega))
        r_s = alpha * r_t + (1.0 - alpha) * r_s
        d_out = step * r_s
        om_ref = omega + d_out
    else:
        c = 0.0
        if ext:
            debt += (A_prev - A) * math.sin(om_ref)
            lim = 0.5 * step
            c = min(max(debt, -lim), lim)
            debt -= c
        d = _advance(om_ref, A, step + c)
        om_ref += d
        r_t = d / step
        if mode == MODE_RECIPROCAL:
            r_s = alpha * r_t + (1.0 - alpha) * r_s
            d_out = step * r_s
        else:
            # Counterfactual: smooth p = 1/r and invert afterwards.
            p_s = alpha / r_t + (1.0 - alpha) / r_s
            r_s = 1.0 / p_s
            d_out = step * r_s
    omega += d_out
    dd = delta_cmd - delta_applied
    if dd > slew_step:
        dd = slew_step
    elif dd < -slew_step:
        dd = -slew_step
    delta_applied += dd
    y = zeta * math.sin(omega) + delta_applied
    return omega, r_s, om_ref, A, debt, delta_applied, y


@njit
def _run(omega, r_s, om_ref, A_prev, debt, delta_applied, A_seq, delta_seq,
         zeta, f, fs, alpha, ext, mode, slew_step):
    n = A_seq.shape[0]
    oms = np.empty(n)
    ys = np.empty(n)
    rs = np.empty(n)
    for i in range(n):
        omega, r_s, om_ref, A_prev, debt, delta_applied, y = _tick(
            omega, r_s, om_ref, A_prev, debt, delta_applied, A_seq[i], delta_seq[i],
            zeta, f, fs, alpha, ext, mode, slew_step)
        oms[i] = omega
        ys[i] = y
        rs[i] = r_s
    return oms, ys, rs, om_ref, A_prev, debt, delta_applied


# ---------------------------------------------------------------- API

def cpg_step(state: OscState, params: WingbeatParams, cfg: SmoothingConfig,
             extended: bool = True, mode: int = MODE_RECIPROCAL) -> tuple[OscState, float]:
    check_admissible(params.A, A_MAX, strict=False)
    out = _tick(state.omega, state.r_smooth, state.omega_ref, state.A_prev, state.debt,
                state.delta, float(params.A), float(params.delta), float(params.zeta),
                float(params.f), float(cfg.f_servo), float(cfg.alpha), bool(extended),
                int(mode), cfg.delta_slew / cfg.f_servo)
    omega, r_s, om_ref, A_prev, debt, delta, y = out
    return OscState(omega, r_s, y, om_ref, A_prev, debt, delta), y


@dataclass
class CpgRun:
    t: np.ndarray
    omega: np.ndarray
    y: np.ndarray
    r_smooth: np.ndarray
    final: OscState


def run_cpg(params: WingbeatParams, cfg: SmoothingConfig, A_seq, delta_seq=None,
            state: OscState | None = None, extended: bool = True,
            mode: int = MODE_RECIPROCAL) -> CpgRun:
    """Drive one oscillator through a per-tick command stream."""
    A_seq = np.ascontiguousarray(A_seq, dtype=np.float64)
    check_admissible(A_seq, A_MAX, strict=False)
    if delta_seq is None:
        delta_seq = np.full(A_seq.shape, params.delta)
    delta_seq = np.ascontiguousarray(delta_seq, dtype=np.float64)
    if state is None:
        state = OscState.initial(replace(params, A=float(A_seq[0])), cfg,
                                 extended=extended)
    oms, ys, rs, om_ref, A_prev, debt, delta = _run(
        state.omega, state.r_smooth, state.omega_ref, state.A_prev, state.debt,
        state.delta, A_seq, delta_seq, float(params.zeta), float(params.f),
        float(cfg.f_servo), float(cfg.alpha), bool(extended), int(mode),
        cfg.delta_slew / cfg.f_servo)
    t = np.arange(1, A_seq.size + 1) / cfg.f_servo
    final = OscState(float(oms[-1]), float(rs[-1]), float(ys[-1]), om_ref, A_prev,
                     debt, delta)
    return CpgRun(t, oms, ys, rs, final)


def max_phase_step(f: float, f_servo: float, A: float) -> float:
    """Largest phase increment a single tick can take at asymmetry A."""
    return math.pi * f / (f_servo * (0.5 - abs(A)))


@dataclass(frozen=True)
class DualWingOutput:
    left: OscState
    right: OscState
    y_L: float
    y_R: float
    A_L: float
    A_R: float
    delta_L: float
    delta_R: float
    sat_L: bool
    sat_R: bool


def _clamp_wing(delta: float, A: float, base: WingbeatParams) -> tuple[float, float, bool]:
    dlim = base.mech_limit - base.zeta
    d = min(max(delta, -dlim), dlim)
    a = min(max(A, -A_MAX), A_MAX)
    return d, a, (d != delta) or (a != A)


def dual_wing_step(left: OscState, right: OscState, sym: tuple[float, float],
                   anti: tuple[float, float], base: WingbeatParams,
                   cfg: SmoothingConfig, extended: bool = True) -> DualWingOutput:
    delta_sym, A_sym = sym
    delta_anti, A_anti = anti
    dL, aL, sL = _clamp_wing(delta_sym + delta_anti, A_sym + A_anti, base)
    dR, aR, sR = _clamp_wing(delta_sym - delta_anti, A_sym - A_anti, base)
    nl, yl = cpg_step(left, replace(base, delta=dL, A=aL), cfg, extended)
    nr, yr = cpg_step(right, replace(base, delta=dR, A=aR), cfg, extended)
    return DualWingOutput(nl, nr, yl, yr, aL, aR, dL, dR, sL, sR)


@dataclass(frozen=True)
class ServoCalib:
    center_us: float = 1500.0
    us_per_deg: float = 10.0
    min_us: float = 900.0
    max_us: float = 2100.0

    def __post_init__(self):
        if self.us_per_deg == 0:
            raise ConfigError("servo calibration must be monotone (us_per_deg != 0)")
        if not self.min_us < self.max_us:
            raise ConfigError("servo pulse range is empty")


def servo_pwm(y: float, calib: ServoCalib = ServoCalib()) -> tuple[float, bool]:
    raw = calib.center_us + y * calib.us_per_deg
    pulse = min(max(raw, calib.min_us), calib.max_us)
    return pulse, pulse != raw


STREAM_COLUMNS = ("tick", "A_L", "A_R", "delta_L", "delta_R", "y_L", "y_R", "pwm_L", "pwm_R")


def write_stream_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STREAM_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def read_command_csv(path) -> dict[str, np.ndarray]:
    """Read a command stream with at least tick, A_L, A_R, delta_L, delta_R."""
    from .io import read_csv_columns

    cols = read_csv_columns(path, required=("A_L", "A_R", "delta_L", "delta_R"))
    return cols
