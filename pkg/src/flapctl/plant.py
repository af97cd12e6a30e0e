"""Desk-scale flight plant with flap-angle-dependent inertia.

Pitch obeys ``d/dt(I_yy * theta_dot) = M_y`` so that
``theta_ddot = (M_y - I_dot * theta_dot) / I_yy``; yaw uses the analogous
``I_zz`` model. Each wing is a point mass at radius ``r_eff`` swept through
flap angle ``phi``, which moves the centre of gravity and the inertia once
per wingbeat. Forces and moments come from an affine cycle-mean map with
fixed signs, spread over the cycle in proportion to squared stroke rate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from ._accel import njit
from .errors import ConfigError, IntegrationFault

G = 9.81
CAL_ANGLE = math.radians(70.0)
# Documentation anchors from the static wind-tunnel sweep.
STATIC_PEAK_LIFT_N = 0.292
STATIC_PEAK_LIFT_ANGLE_DEG = 40.0
BODY_WEIGHT_N = 0.26

_BODY_LENGTH = 0.10


@dataclass(frozen=True)
class InertiaModel:
    I_body_yy: float = 5.38e-5
    I_body_zz: float = 4.23e-5
    m_wing: float = 0.0049
    r_eff: float = 0.10
    x_w: float = 0.02
    kappa_x: float = 0.03 * _BODY_LENGTH / math.sin(CAL_ANGLE)
    m_total: float = 0.026
    body_length: float = _BODY_LENGTH
    core_height: float = 0.0177
    core_height_multiple: float = 2.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"inertia model field {k} must be positive, got {v}")
        if 2 * self.m_wing >= self.m_total:
            raise ConfigError("wing mass must be below half the total mass")

    def inertia_ratio(self, phi_max: float = CAL_ANGLE) -> float:
        return inertia_at(self, phi_max, 0.0)[0] / inertia_at(self, 0.0, 0.0)[0]

    def check_calibration(self, ratio_tol: float = 0.1, cg_tol: float = 0.05) -> None:
        r = self.inertia_ratio()
        if abs(r - 2.5) > ratio_tol:
            raise ConfigError(f"I_yy ratio over 0..70 deg is {r:.4f}, outside 2.5 +/- {ratio_tol}")
        z_peak = abs(cg_at(self, CAL_ANGLE)[1])
        target = self.core_height_multiple * self.core_height
        if abs(z_peak / target - 1.0) > cg_tol:
            raise ConfigError(
                f"peak vertical CG shift {z_peak:.4g} m is not {self.core_height_multiple:g}x "
                f"the core height {self.core_height:.4g} m")


def inertia_at(model: InertiaModel, phi: float, phi_dot: float) -> tuple[float, float]:
    """Pitch inertia and its rate for both wings at flap angle ``phi`` (rad)."""
    m, r = model.m_wing, model.r_eff
    I = model.I_body_yy + 2.0 * m * (model.x_w ** 2 + r * r * math.sin(phi) ** 2)
    Idot = 2.0 * m * r * r * math.sin(2.0 * phi) * phi_dot
    return I, Idot


def inertia_zz_at(model: InertiaModel, phi: float, phi_dot: float) -> tuple[float, float]:
    m, r = model.m_wing, model.r_eff
    I = model.I_body_zz + 2.0 * m * (model.x_w ** 2 + r * r * math.cos(phi) ** 2)
    Idot = -2.0 * m * r * r * math.sin(2.0 * phi) * phi_dot
    return I, Idot


def cg_at(model: InertiaModel, phi: float) -> tuple[float, float]:
    s = math.sin(phi)
    return model.kappa_x * s, 2.0 * model.m_wing * model.r_eff * s / model.m_total


# ---------------------------------------------------------------- force map

@dataclass(frozen=True)
class ForceTorque:
    F: tuple[float, float, float]
    M: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array([*self.F, *self.M], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ForceTorque":
        a = [float(v) for v in a]
        return cls((a[0], a[1], a[2]), (a[3], a[4], a[5]))


# Required sign of every sensitivity (+1 or -1).
FT_SIGNS = {
    "c_Fzeta": 1, "c_Ff": 1,
    "c_My_delta": -1, "c_My_A": 1,
    "c_Mz_delta_anti": 1, "c_Mz_A_anti": -1,
    "c_Mx_delta_anti": 1, "c_Mx_A_anti": 1,
    "F_x0": 1, "F_z0": 1,
}


@dataclass(frozen=True)
class FtMapConfig:
    F_x0: float = 0.05
    F_z0: float = 0.26
    zeta0: float = 40.0
    f0: float = 10.0
    c_Fzeta: float = 4.0e-3       # N/deg
    c_Ff: float = 2.0e-2          # N/Hz
    c_My_delta: float = -1.05e-3  # N m/deg
    c_My_A: float = 2.1e-2        # N m per unit A
    c_Mz_delta_anti: float = 4.7e-4
    c_Mz_A_anti: float = -8.2e-3
    c_Mx_delta_anti: float = 5.0e-4
    c_Mx_A_anti: float = 4.0e-3
    shape_exponent: float = 2.0
    c_theta: float = 2.0e-3       # N m s/rad
    c_psi: float = 4.0e-3
    c_lin: float = 0.05           # N s/m

    def __post_init__(self):
        for k, s in FT_SIGNS.items():
            v = getattr(self, k)
            if not (math.isfinite(v) and v * s > 0):
                want = "positive" if s > 0 else "negative"
                raise ConfigError(f"force-torque sensitivity {k}={v:g} must be {want}")
        if not self.shape_exponent > 0:
            raise ConfigError("shape exponent must be positive")
        for k in ("c_theta", "c_psi", "c_lin"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be non-negative")


def shaping_integral(A: float, n: float = 2.0, points: int = 4096) -> float:
    """Integral over one cycle of |cos w|**n * p(w)**(1-n) dw with p = 0.5 + A cos w."""
    if n == 2.0:
        a, b = 0.5, abs(A)
        if b < 1e-3:
            return math.pi / a + 3 * math.pi * b ** 2 / (4 * a ** 3) + 5 * math.pi * b ** 4 / (8 * a ** 5)
        return 2 * math.pi / b ** 2 * (-a + a * a / math.sqrt(a * a - b * b))
    w = np.arange(points) * (2 * math.pi / points)
    return float(np.sum(np.abs(np.cos(w)) ** n * (0.5 + A * np.cos(w)) ** (1 - n))
                 * (2 * math.pi / points))


def ft_mean(cfg: FtMapConfig, left, right) -> np.ndarray:
    """Cycle-mean (Fx, Fy, Fz, Mx, My, Mz) for per-wing WingbeatParams."""
    zeta = 0.5 * (left.zeta + right.zeta)
    f = 0.5 * (left.f + right.f)
    d_sym = 0.5 * (left.delta + right.delta)
    d_anti = 0.5 * (left.delta - right.delta)
    a_sym = 0.5 * (left.A + right.A)
    a_anti = 0.5 * (left.A - right.A)
    f_norm = math.hypot(cfg.F_x0, cfg.F_z0)
    gain = 1.0 + (cfg.c_Fzeta * (zeta - cfg.zeta0) + cfg.c_Ff * (f - cfg.f0)) / f_norm
    Fx = cfg.F_x0 * gain
    Fz = cfg.F_z0 * gain
    Mx = cfg.c_Mx_delta_anti * d_anti + cfg.c_Mx_A_anti * a_anti
    My = cfg.c_My_delta * d_sym + cfg.c_My_A * a_sym
    Mz = cfg.c_Mz_delta_anti * d_anti + cfg.c_Mz_A_anti * a_anti
    return np.array([Fx, 0.0, Fz, Mx, My, Mz])


def shape_factor(cfg: FtMapConfig, params, stroke_rate: float) -> float:
    """Instantaneous weight whose time average over a STAR cycle is one."""
    n = cfg.shape_exponent
    norm = params.f * abs(params.zeta) ** n * (math.pi * params.f) ** (n - 1) \
        * shaping_integral(params.A, n)
    return abs(stroke_rate) ** n / norm


def ft_map(cfg: FtMapConfig, left, right, omega_phase, stroke_rate) -> ForceTorque:
    """Instantaneous force-torque; phase and rate may be scalars or (left, right).

    ``stroke_rate`` is dy/dt in deg/s. ``omega_phase`` is accepted for the
    call signature; the shaping depends on it only through ``stroke_rate``.
    """
    rl, rr = (stroke_rate, stroke_rate) if np.isscalar(stroke_rate) else stroke_rate
    s = 0.5 * (shape_factor(cfg, left, rl) + shape_factor(cfg, right, rr))
    return ForceTorque.from_array(ft_mean(cfg, left, right) * s)


def star_stroke_rate(params, omega: float) -> float:
    """dy/dt (deg/s) for a wing following the continuous STAR phase."""
    p = 0.5 + params.A * math.cos(omega)
    return params.zeta * math.cos(omega) * math.pi * params.f / p


# ---------------------------------------------------------------- dynamics

@dataclass(frozen=True)
class BodyState:
    theta: float = 0.0
    theta_dot: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    pos: tuple[float, float] = (0.0, 0.0)
    vel: tuple[float, float] = (0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot, self.psi, self.psi_dot,
                         self.pos[0], self.pos[1], self.vel[0], self.vel[1]])

    @classmethod
    def from_array(cls, a) -> "BodyState":
        a = [float(v) for v in a]
        return cls(a[0], a[1], a[2], a[3], (a[4], a[5]), (a[6], a[7]))


@dataclass(frozen=True)
class Damping:
    c_theta: float = 0.0
    c_psi: float = 0.0
    c_lin: float = 0.0


def _deriv(x, model: InertiaModel, ft: np.ndarray, phi: float, phi_dot: float,
           damp: Damping) -> np.ndarray:
    I, Id = inertia_at(model, phi, phi_dot)
    Iz, Izd = inertia_zz_at(model, phi, phi_dot)
    th, thd, _, psd = x[0], x[1], x[2], x[3]
    vx, vz = x[6], x[7]
    Fx, Fz, My, Mz = ft[0], ft[2], ft[4], ft[5]
    c, s = math.cos(th), math.sin(th)
    ax = (Fx * c - Fz * s - damp.c_lin * vx) / model.m_total
    az = (Fx * s + Fz * c - damp.c_lin * vz) / model.m_total - G
    return np.array([thd, (My - Id * thd - damp.c_theta * thd) / I,
                     psd, (Mz - Izd * psd - damp.c_psi * psd) / Iz,
                     vx, vz, ax, az])


def dynamics_step(state: BodyState, model: InertiaModel, ft: ForceTorque, phi,
                  phi_dot: float = 0.0, dt: float = 1e-4,
                  damping: Damping = Damping()) -> BodyState:
    """RK4 advance over ``dt``.

    ``phi`` is either a fixed flap angle (rad, with rate ``phi_dot``) or a
    callable ``s -> (phi, phi_dot)`` giving the wing motion at offset ``s``
    into the step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    wing: Callable = phi if callable(phi) else (lambda s: (phi, phi_dot))
    f = ft.as_array()
    x = state.as_array()
    p0, p1, p2 = wing(0.0), wing(0.5 * dt), wing(dt)
    k1 = _deriv(x, model, f, *p0, damping)
    k2 = _deriv(x + 0.5 * dt * k1, model, f, *p1, damping)
    k3 = _deriv(x + 0.5 * dt * k2, model, f, *p1, damping)
    k4 = _deriv(x + dt * k3, model, f, *p2, damping)
    xn = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    if not np.all(np.isfinite(xn)):
        raise IntegrationFault("non-finite body state")
    return BodyState.from_array(xn)


# Flat parameter vector layout for the compiled kernels.
def _model_vec(model: InertiaModel, cfg: FtMapConfig, damp: Damping) -> np.ndarray:
    return np.array([model.I_body_yy, model.I_body_zz, model.m_wing, model.r_eff,
                     model.x_w, model.kappa_x, model.m_total,
                     damp.c_theta, damp.c_psi, damp.c_lin, cfg.shape_exponent])


@njit
def _wings(s, w):
    """Per-wing flap angle (rad) and rate at offset s into a control tick.

    w = [omL, dOmL, omR, dOmR, dL0, dL1, dR0, dR1, zeta_deg, T]
    """
    T = w[9]
    u = s / T
    z = w[8]
    oL = w[0] + w[1] * u
    oR = w[2] + w[3] * u
    dL = w[4] + (w[5] - w[4]) * u
    dR = w[6] + (w[7] - w[6]) * u
    rL = w[1] / T
    rR = w[3] / T
    phiL = math.radians(z * math.sin(oL) + dL)
    phiR = math.radians(z * math.sin(oR) + dR)
    pdL = math.radians(z * math.cos(oL) * rL + (w[5] - w[4]) / T)
    pdR = math.radians(z * math.cos(oR) * rR + (w[7] - w[6]) / T)
    return phiL, phiR, pdL, pdR, oL, oR, rL, rR


@njit
def _plant_rhs(x, s, w, mp, fmean, norms, out_ft):
    Ib, Ibz, m, r, xw, kx, mt = mp[0], mp[1], mp[2], mp[3], mp[4], mp[5], mp[6]
    cth, cps, cl, n = mp[7], mp[8], mp[9], mp[10]
    phiL, phiR, pdL, pdR, oL, oR, rL, rR = _wings(s, w)
    sL, sR = math.sin(phiL), math.sin(phiR)
    cL, cR = math.cos(phiL), math.cos(phiR)
    I = Ib + m * (2.0 * xw * xw + r * r * (sL * sL + sR * sR))
    Id = m * r * r * (math.sin(2 * phiL) * pdL + math.sin(2 * phiR) * pdR)
    Iz = Ibz + m * (2.0 * xw * xw + r * r * (cL * cL + cR * cR))
    Izd = -Id
    z = w[8]
    rateL = abs(z * math.cos(oL) * rL)
    rateR = abs(z * math.cos(oR) * rR)
    shape = 0.5 * (rateL ** n / norms[0] + rateR ** n / norms[1])
    for k in range(6):
        out_ft[k] = fmean[k] * shape
    Fx, Fz = out_ft[0], out_ft[2]
    x_cg = 0.5 * kx * (sL + sR)
    z_cg = m * r * (sL + sR) / mt
    My = out_ft[4] + z_cg * Fx - x_cg * Fz
    Mz = out_ft[5]
    th, thd, psd = x[0], x[1], x[3]
    vx, vz = x[6], x[7]
    c, sn = math.cos(th), math.sin(th)
    d = np.empty(8)
    d[0] = thd
    d[1] = (My - Id * thd - cth * thd) / I
    d[2] = psd
    d[3] = (Mz - Izd * psd - cps * psd) / Iz
    d[4] = vx
    d[5] = vz
    d[6] = (Fx * c - Fz * sn - cl * vx) / mt
    d[7] = (Fx * sn + Fz * c - cl * vz) / mt - 9.81
    return d, I, Id


@njit
def _plant_tick(x, w, mp, fmean, norms, substeps):
    """Advance the body over one control tick; returns state and end-of-tick extras."""
    T = w[9]
    h = T / substeps
    ft = np.empty(6)
    for i in range(substeps):
        s = i * h
        k1, _, _ = _plant_rhs(x, s, w, mp, fmean, norms, ft)
        k2, _, _ = _plant_rhs(x + 0.5 * h * k1, s + 0.5 * h, w, mp, fmean, norms, ft)
        k3, _, _ = _plant_rhs(x + 0.5 * h * k2, s + 0.5 * h, w, mp, fmean, norms, ft)
        k4, _, _ = _plant_rhs(x + h * k3, s + h, w, mp, fmean, norms, ft)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        for j in range(8):
            if not math.isfinite(x[j]):
                return x, False, ft, 0.0, 0.0, np.zeros(8)
    dx, I, Id = _plant_rhs(x, T, w, mp, fmean, norms, ft)
    return x, True, ft, I, Id, dx


def imu_from_state(x: np.ndarray, dx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ideal gyro (rad/s) and accelerometer (g) readings for the reduced state."""
    th, thd, psd = x[0], x[1], x[3]
    gyro = np.array([psd * math.sin(th), -thd, psd * math.cos(th)])
    ax, az = dx[6], dx[7] + G
    c, s = math.cos(th), math.sin(th)
    accel = np.array([c * ax + s * az, 0.0, -s * ax + c * az]) / G
    return gyro, accel
