"""Closed-loop and open-loop flight simulation.

The controller runs at the servo rate; between ticks the plant is advanced
with fixed RK4 substeps while each wing's phase moves linearly from its
previous to its newly commanded value.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (TELEMETRY_COLUMNS, Allocation, AllocationMode, ControlOutput,
                      ControllerConfig, ControllerState, SetpointSchedule, control_tick)
from .cpg import WingbeatParams, dual_wing_step
from .errors import FlapctlError, IntegrationFault
from .estimation import ImuSample, Quat, quat_from_euler
from .plant import (BodyState, Damping, FtMapConfig, InertiaModel, _model_vec,
                    _plant_tick, ft_mean, imu_from_state, shaping_integral)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("t", "phi_L", "phi_R", "theta", "theta_dot", "psi", "psi_dot",
               "pos_x", "pos_z", "vel_x", "vel_z", "Fx", "Fy", "Fz", "Mx", "My", "Mz",
               "I_yy", "I_dot") + tuple(c for c in TELEMETRY_COLUMNS if c != "t")


@dataclass(frozen=True)
class Scenario:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    model: InertiaModel = field(default_factory=InertiaModel)
    ftmap: FtMapConfig = field(default_factory=FtMapConfig)
    setpoints: SetpointSchedule = field(default_factory=SetpointSchedule.constant)
    physics_rate: float = 1000.0
    closed_loop: bool = True
    open_loop_cmd: ControlOutput = field(default_factory=ControlOutput)
    initial: BodyState = field(default_factory=BodyState)
    imu_noise_gyro: float = 0.0   # rad/s, 1 sigma
    imu_noise_accel: float = 0.0  # g, 1 sigma
    seed: int = 0

    def __post_init__(self):
        ratio = self.physics_rate / self.controller.smoothing.f_servo
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("physics rate must be an integer multiple of the control rate")

    @property
    def substeps(self) -> int:
        return int(round(self.physics_rate / self.controller.smoothing.f_servo))

    @classmethod
    def for_mode(cls, mode: str | AllocationMode, **kw) -> "Scenario":
        alloc = kw.pop("allocation", None) or Allocation(mode=AllocationMode(mode))
        ctrl = kw.pop("controller", None) or ControllerConfig(allocation=alloc)
        return cls(controller=ctrl, **kw)


@dataclass
class SimLog:
    columns: tuple
    data: np.ndarray
    ok: bool = True
    error: str = ""

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        from .io import write_rows

        flags_i = self.columns.index("flags")
        rows = ([int(v) if j == flags_i else v for j, v in enumerate(r)] for r in self.data)
        write_rows(path, self.columns, rows)


class SimulationAborted(FlapctlError, RuntimeError):
    def __init__(self, message: str, partial: SimLog):
        super().__init__(message)
        self.partial = partial


def simulate(scenario: Scenario, duration: float) -> SimLog:
    cfg = scenario.controller
    base = cfg.base
    fs = cfg.smoothing.f_servo
    T = 1.0 / fs
    n_ticks = int(round(duration * fs))
    rng = np.random.default_rng(scenario.seed)
    damp = Damping(scenario.ftmap.c_theta, scenario.ftmap.c_psi, scenario.ftmap.c_lin)
    mp = _model_vec(scenario.model, scenario.ftmap, damp)
    n_exp = scenario.ftmap.shape_exponent

    x = scenario.initial.as_array()
    q0 = quat_from_euler(0.0, math.degrees(x[0]), math.degrees(x[2]))
    st = ControllerState.initial(cfg, q0, pitch0=math.degrees(x[0]))
    rows = np.empty((n_ticks, len(LOG_COLUMNS)))
    dx = np.zeros(8)
    dx[7] = -0.0
    # Derivative at t=0 for the first IMU sample: body at rest under its own forces.
    dx[6], dx[7] = 0.0, 0.0
    norm_cache: dict[float, float] = {}

    def norm(A: float) -> float:
        v = norm_cache.get(A)
        if v is None:
            v = base.f * abs(base.zeta) ** n_exp * (math.pi * base.f) ** (n_exp - 1) \
                * shaping_integral(A, n_exp)
            norm_cache[A] = v
        return v

    left, right = st.left, st.right
    for k in range(n_ticks):
        t = k * T
        gyro, accel = imu_from_state(x, dx)
        if scenario.imu_noise_gyro:
            gyro = gyro + rng.normal(0.0, scenario.imu_noise_gyro, 3)
        if scenario.imu_noise_accel:
            accel = accel + rng.normal(0.0, scenario.imu_noise_accel, 3)
        sample = ImuSample(tuple(gyro), tuple(accel), t)
        try:
            if scenario.closed_loop:
                res = control_tick(sample, scenario.setpoints.at(t), cfg, st)
                wings, tel = res.wings, res.telemetry
                st = res.state
            else:
                cmd = scenario.open_loop_cmd
                wings = dual_wing_step(left, right, (cmd.delta_sym, cmd.A_sym),
                                       (cmd.delta_anti, cmd.A_anti), base, cfg.smoothing,
                                       cfg.extended)
                tel = (t, math.nan, math.nan, math.nan, math.nan, 0.0, 0.0,
                       cmd.delta_sym, cmd.delta_anti, cmd.A_sym, cmd.A_anti,
                       wings.y_L, wings.y_R, 0)
            if wings is None:
                raise FlapctlError(f"controller fault at t={t:.3f} s (stale sample)")
            pL = replace(base, delta=wings.delta_L, A=wings.A_L)
            pR = replace(base, delta=wings.delta_R, A=wings.A_R)
            fmean = ft_mean(scenario.ftmap, pL, pR)
            norms = np.array([norm(wings.A_L), norm(wings.A_R)])
            w = np.array([left.omega, wings.left.omega - left.omega,
                          right.omega, wings.right.omega - right.omega,
                          left.delta, wings.left.delta, right.delta, wings.right.delta,
                          base.zeta, T])
            x, ok, ft, I, Id, dx = _plant_tick(x, w, mp, fmean, norms, scenario.substeps)
            if not ok:
                raise IntegrationFault(f"non-finite body state during t=[{t:.3f}, {t + T:.3f}] s")
        except (FlapctlError, ValueError, ArithmeticError) as exc:
            partial = SimLog(LOG_COLUMNS, rows[:k].copy(), False, str(exc))
            raise SimulationAborted(str(exc), partial) from exc
        left, right = wings.left, wings.right
        rows[k, :19] = (t + T, math.radians(wings.y_L), math.radians(wings.y_R),
                        *x[:8], *ft, I, Id)
        rows[k, 19:] = tel[1:]
    return SimLog(LOG_COLUMNS, rows)


def cycle_average(t: np.ndarray, v: np.ndarray, f: float) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping averages over whole wingbeat periods."""
    dt = t[1] - t[0]
    n = max(int(round(1.0 / (f * dt))), 1)
    m = v.size // n
    return t[: m * n].reshape(m, n).mean(axis=1), v[: m * n].reshape(m, n).mean(axis=1)
