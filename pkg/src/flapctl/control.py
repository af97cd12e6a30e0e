"""PID attitude regulation and allocation onto wing modulation channels.

Pitch closes on the RLS-extracted mean pitch, yaw on the raw fused yaw.
Offset mode steers with stroke-angle offsets, timing mode with stroke-timing
asymmetry; the other pair of channels stays neutral.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cpg import (OscState, SmoothingConfig, WingbeatParams, dual_wing_step,
                  servo_pwm, ServoCalib)
from .errors import ConfigError
from .estimation import (ImuSample, PhaseAccumulator, Quat, RlsState, adaptive_regressor,
                         euler_from_quat, madgwick_update_flagged, rls_update)
from .star import A_MAX


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    i_limit: float = 20.0
    out_limit: float = 30.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ConfigError("PID gains must be non-negative")
        if not (self.i_limit > 0 and self.out_limit > 0):
            raise ConfigError("PID limits must be positive")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_err: float | None = None


def pid_step(gains: PidGains, state: PidState, err: float, dt: float) -> tuple[PidState, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    prev = err if state.prev_err is None else state.prev_err
    integral = state.integral + err * dt
    integral = min(max(integral, -gains.i_limit), gains.i_limit)
    u = gains.kp * err + gains.ki * integral + gains.kd * (err - prev) / dt
    u = min(max(u, -gains.out_limit), gains.out_limit)
    return PidState(integral, err), u


class AllocationMode(str, enum.Enum):
    OFFSET = "offset"
    TIMING = "timing"


SIGN_KEYS = ("sign_pitch_offset", "sign_pitch_A", "sign_yaw", "sign_yaw_A")


@dataclass(frozen=True)
class Allocation:
    mode: AllocationMode = AllocationMode.OFFSET
    sign_pitch_offset: int = -1   # pitch-up demand lowers both wings
    sign_pitch_A: int = 1         # larger A is nose-up
    sign_yaw: int = 1             # delta_anti > 0 turns left (positive yaw)
    sign_yaw_A: int = -1          # A_anti > 0 turns right
    k_p2delta: float = 1.0        # deg per unit
    k_y2delta: float = 1.0
    k_p2A: float = 0.05           # A per unit
    k_y2A: float = 0.05
    A0: float = 0.0
    delta_limit: float = 20.0     # deg, per channel
    A_limit: float = 0.2          # per channel

    def __post_init__(self):
        object.__setattr__(self, "mode", AllocationMode(self.mode))
        for k in SIGN_KEYS:
            if getattr(self, k) not in (1, -1):
                raise ConfigError(f"{k} must be +1 or -1, got {getattr(self, k)}")
        if abs(self.A0) + 2 * self.A_limit > A_MAX + 1e-12:
            raise ConfigError(
                f"|A0| + 2*A_limit = {abs(self.A0) + 2 * self.A_limit:g} exceeds the "
                f"admissible |A| <= {A_MAX}")

    def flipped(self, key: str) -> "Allocation":
        return replace(self, **{key: -getattr(self, key)})


@dataclass(frozen=True)
class ControlOutput:
    delta_sym: float = 0.0
    delta_anti: float = 0.0
    A_sym: float = 0.0
    A_anti: float = 0.0
    saturated: tuple[bool, bool, bool, bool] = (False, False, False, False)


def _clip(v: float, lim: float) -> tuple[float, bool]:
    c = min(max(v, -lim), lim)
    return c, c != v


def allocate(mode: Allocation, u_pitch: float, u_yaw: float) -> ControlOutput:
    if not (math.isfinite(u_pitch) and math.isfinite(u_yaw)):
        raise ValueError("control demands must be finite")
    if mode.mode is AllocationMode.OFFSET:
        ds, s0 = _clip(mode.sign_pitch_offset * mode.k_p2delta * u_pitch, mode.delta_limit)
        da, s1 = _clip(mode.sign_yaw * mode.k_y2delta * u_yaw, mode.delta_limit)
        return ControlOutput(ds, da, mode.A0, 0.0, (s0, s1, False, False))
    dA, s2 = _clip(mode.sign_pitch_A * mode.k_p2A * u_pitch, mode.A_limit)
    aa, s3 = _clip(mode.sign_yaw_A * mode.k_y2A * u_yaw, mode.A_limit)
    return ControlOutput(0.0, 0.0, mode.A0 + dA, aa, (False, False, s2, s3))


# Published gains per mode: pitch PID and P-only yaw.
FLIGHT_GAINS = {
    AllocationMode.OFFSET: (PidGains(0.6, 0.45, 0.05), PidGains(0.15)),
    AllocationMode.TIMING: (PidGains(0.6, 0.7, 0.07), PidGains(0.17)),
}


@dataclass(frozen=True)
class ControllerConfig:
    allocation: Allocation = field(default_factory=Allocation)
    pitch_gains: PidGains | None = None
    yaw_gains: PidGains | None = None
    beta: float = 0.1
    lam: float = 0.995
    sigma0_sq: float = 1e3
    base: WingbeatParams = field(default_factory=WingbeatParams)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig.from_cutoff)
    servo: ServoCalib = field(default_factory=ServoCalib)
    extended: bool = True

    def __post_init__(self):
        pg, yg = FLIGHT_GAINS[self.allocation.mode]
        if self.pitch_gains is None:
            object.__setattr__(self, "pitch_gains", pg)
        if self.yaw_gains is None:
            object.__setattr__(self, "yaw_gains", yg)
        if not (0 < self.lam <= 1):
            raise ConfigError("forgetting factor must lie in (0, 1]")
        if self.beta < 0:
            raise ConfigError("Madgwick gain must be non-negative")
        self.smoothing.check_against(self.base.f)

    @property
    def dt(self) -> float:
        return 1.0 / self.smoothing.f_servo


@dataclass(frozen=True)
class ControllerState:
    q: Quat
    rls: RlsState
    acc: PhaseAccumulator
    pid_pitch: PidState
    pid_yaw: PidState
    left: OscState
    right: OscState
    t_last: float | None = None
    last_cmd: tuple[float, float] = (0.0, 0.0)
    omega_inst: float = 0.0

    @classmethod
    def initial(cls, cfg: ControllerConfig, q0: Quat | None = None,
                pitch0: float = 0.0) -> "ControllerState":
        base = replace(cfg.base, A=cfg.allocation.A0
                       if cfg.allocation.mode is AllocationMode.TIMING else cfg.base.A)
        osc = OscState.initial(base, cfg.smoothing, extended=cfg.extended)
        rls = RlsState.initial(cfg.lam, cfg.sigma0_sq, (0.0, 0.0, pitch0))
        return cls(q0 or Quat(), rls, PhaseAccumulator(0.0), PidState(), PidState(),
                   osc, osc, None, (osc.y, osc.y),
                   2.0 * math.pi * cfg.base.f)


@dataclass(frozen=True)
class Setpoint:
    pitch_ref: float = 0.0
    yaw_ref: float = 0.0


TELEMETRY_COLUMNS = ("t", "roll", "pitch", "yaw", "pitch_mean", "u_pitch", "u_yaw",
                     "delta_sym", "delta_anti", "A_sym", "A_anti", "y_L", "y_R", "flags")

FLAG_STALE = 1
FLAG_ACCEL = 2
FLAG_GIMBAL = 4
FLAG_SAT_L = 8
FLAG_SAT_R = 16
FLAG_ALLOC_SAT = 32


@dataclass(frozen=True)
class TickResult:
    state: ControllerState
    y_L: float
    y_R: float
    pwm_L: float
    pwm_R: float
    telemetry: tuple
    wings: object = None


def _wrap180(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def control_tick(sample: ImuSample, setpoint: Setpoint, cfg: ControllerConfig,
                 st: ControllerState) -> TickResult:
    """One 100 Hz pass: fuse, extract mean pitch, regulate, allocate, oscillate."""
    dt = cfg.dt
    if st.t_last is not None and not sample.t > st.t_last:
        yL, yR = st.last_cmd
        tel = (sample.t, math.nan, math.nan, math.nan, st.rls.c, 0.0, 0.0, 0.0, 0.0,
               0.0, 0.0, yL, yR, FLAG_STALE)
        return TickResult(st, yL, yR, servo_pwm(yL, cfg.servo)[0],
                          servo_pwm(yR, cfg.servo)[0], tel)
    flags = 0
    q, skipped = madgwick_update_flagged(st.q, sample, cfg.beta, dt)
    if skipped:
        flags |= FLAG_ACCEL
    roll, pitch, yaw = euler_from_quat(q)
    if abs(pitch) > 89.9:
        flags |= FLAG_GIMBAL
    acc, reg = adaptive_regressor(st.acc, st.omega_inst, dt)
    rls, c = rls_update(st.rls, pitch, reg)
    pp, u_p = pid_step(cfg.pitch_gains, st.pid_pitch, setpoint.pitch_ref - c, dt)
    py, u_y = pid_step(cfg.yaw_gains, st.pid_yaw, _wrap180(setpoint.yaw_ref - yaw), dt)
    out = allocate(cfg.allocation, u_p, u_y)
    if any(out.saturated):
        flags |= FLAG_ALLOC_SAT
    wings = dual_wing_step(st.left, st.right, (out.delta_sym, out.A_sym),
                           (out.delta_anti, out.A_anti), cfg.base, cfg.smoothing,
                           cfg.extended)
    if wings.sat_L:
        flags |= FLAG_SAT_L
    if wings.sat_R:
        flags |= FLAG_SAT_R
    # The regressor follows the left oscillator's per-tick phase rate.
    omega_inst = (wings.left.omega - st.left.omega) / dt
    pwm_L, _ = servo_pwm(wings.y_L, cfg.servo)
    pwm_R, _ = servo_pwm(wings.y_R, cfg.servo)
    new = ControllerState(q, rls, acc, pp, py, wings.left, wings.right, sample.t,
                          (wings.y_L, wings.y_R), omega_inst)
    tel = (sample.t, roll, pitch, yaw, c, u_p, u_y, out.delta_sym, out.delta_anti,
           out.A_sym, out.A_anti, wings.y_L, wings.y_R, flags)
    return TickResult(new, wings.y_L, wings.y_R, pwm_L, pwm_R, tel, wings)


def read_setpoint_schedule(path) -> "SetpointSchedule":
    from .io import read_csv_columns

    c = read_csv_columns(path, required=("t", "pitch_ref", "yaw_ref"))
    return SetpointSchedule(c["t"], c["pitch_ref"], c["yaw_ref"])


@dataclass(frozen=True)
class SetpointSchedule:
    """Zero-order-hold setpoints switching at the listed times."""

    t: np.ndarray
    pitch_ref: np.ndarray
    yaw_ref: np.ndarray

    @classmethod
    def constant(cls, pitch_ref: float = 0.0, yaw_ref: float = 0.0) -> "SetpointSchedule":
        return cls(np.array([0.0]), np.array([pitch_ref]), np.array([yaw_ref]))

    @classmethod
    def step(cls, t_step: float, pitch: tuple[float, float] = (0.0, 0.0),
             yaw: tuple[float, float] = (0.0, 0.0)) -> "SetpointSchedule":
        return cls(np.array([0.0, t_step]), np.array(pitch, float), np.array(yaw, float))

    def at(self, t: float) -> Setpoint:
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        i = max(i, 0)
        return Setpoint(float(self.pitch_ref[i]), float(self.yaw_ref[i]))
