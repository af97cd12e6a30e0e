"""Attitude fusion and slow-mean extraction.

Frame: body +x forward, +y left, +z up. A level IMU at rest reads
accel = (0, 0, +1) g. Pitch is reported nose-up positive, which is a negative
rotation about +y in this frame.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import njit
from .errors import FlapctlError

ACCEL_MIN_G = 0.1
GIMBAL_LIMIT_DEG = 89.9


class NonFiniteInput(FlapctlError, ValueError):
    pass


@dataclass(frozen=True)
class Quat:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a) -> "Quat":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def norm(self) -> float:
        return math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)

    def __mul__(self, o: "Quat") -> "Quat":
        return Quat.from_array(qmul(self.as_array(), o.as_array()))

    def conj(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)


@dataclass(frozen=True)
class ImuSample:
    gyro: tuple[float, float, float]
    accel: tuple[float, float, float]
    t: float


@njit
def qmul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit
def _madgwick(q, g, a, beta, dt):
    """One update; returns the new quaternion and whether correction was skipped."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    gx, gy, gz = g[0], g[1], g[2]
    dw = 0.5 * (-x * gx - y * gy - z * gz)
    dx = 0.5 * (w * gx + y * gz - z * gy)
    dy = 0.5 * (w * gy - x * gz + z * gx)
    dz = 0.5 * (w * gz + x * gy - y * gx)
    an = math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    skipped = an < ACCEL_MIN_G
    if beta > 0.0 and not skipped:
        ax, ay, az = a[0] / an, a[1] / an, a[2] / an
        # Objective: predicted gravity direction minus measured, in body frame.
        f1 = 2.0 * (x * z - w * y) - ax
        f2 = 2.0 * (w * x + y * z) - ay
        f3 = 2.0 * (0.5 - x * x - y * y) - az
        sw = -2.0 * y * f1 + 2.0 * x * f2
        sx = 2.0 * z * f1 + 2.0 * w * f2 - 4.0 * x * f3
        sy = -2.0 * w * f1 + 2.0 * z * f2 - 4.0 * y * f3
        sz = 2.0 * x * f1 + 2.0 * y * f2
        sn = math.sqrt(sw * sw + sx * sx + sy * sy + sz * sz)
        if sn > 0.0:
            dw -= beta * sw / sn
            dx -= beta * sx / sn
            dy -= beta * sy / sn
            dz -= beta * sz / sn
    w += dw * dt
    x += dx * dt
    y += dy * dt
    z += dz * dt
    n = math.sqrt(w * w + x * x + y * y + z * z)
    out = np.empty(4)
    out[0] = w / n
    out[1] = x / n
    out[2] = y / n
    out[3] = z / n
    return out, skipped


@njit
def _madgwick_batch(q0, gyro, accel, dts, beta):
    n = gyro.shape[0]
    qs = np.empty((n, 4))
    skipped = np.zeros(n, dtype=np.bool_)
    q = q0.copy()
    for i in range(n):
        q, s = _madgwick(q, gyro[i], accel[i], beta, dts[i])
        qs[i] = q
        skipped[i] = s
    return qs, skipped


def madgwick_update_flagged(q: Quat, sample: ImuSample, beta: float, dt: float
                            ) -> tuple[Quat, bool]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    g = np.asarray(sample.gyro, dtype=float)
    a = np.asarray(sample.accel, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
        raise NonFiniteInput("IMU sample has non-finite components")
    out, skipped = _madgwick(q.as_array(), g, a, float(beta), float(dt))
    return Quat.from_array(out), bool(skipped and beta > 0)


def madgwick_update(q: Quat, sample: ImuSample, beta: float = 0.1, dt: float = 0.01) -> Quat:
    return madgwick_update_flagged(q, sample, beta, dt)[0]


def madgwick_run(q0: Quat, t, gyro, accel, beta: float = 0.1, dt0: float | None = None):
    """Filter a whole IMU stream; the first sample uses ``dt0`` (default: next spacing)."""
    t = np.asarray(t, dtype=float)
    dts = np.diff(t, prepend=np.nan)
    dts[0] = dt0 if dt0 is not None else (dts[1] if t.size > 1 else 0.01)
    if np.any(dts <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    return _madgwick_batch(q0.as_array(), np.ascontiguousarray(gyro, dtype=float),
                           np.ascontiguousarray(accel, dtype=float), dts, float(beta))


def euler_from_quat_flagged(q: Quat) -> tuple[tuple[float, float, float], bool]:
    w, x, y, z = q.w, q.x, q.y, q.z
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    s = max(-1.0, min(1.0, 2.0 * (x * z - w * y)))
    pitch = math.asin(s)
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    deg = (math.degrees(roll), math.degrees(pitch), math.degrees(yaw))
    return deg, abs(deg[1]) > GIMBAL_LIMIT_DEG


def euler_from_quat(q: Quat) -> tuple[float, float, float]:
    """(roll, pitch, yaw) in degrees, intrinsic Z-Y-X, pitch nose-up positive."""
    return euler_from_quat_flagged(q)[0]


def quat_from_euler(roll: float, pitch: float, yaw: float) -> Quat:
    """Inverse of :func:`euler_from_quat` (angles in degrees)."""
    hr, hp, hy = (math.radians(v) / 2.0 for v in (roll, -pitch, yaw))
    qx = np.array([math.cos(hr), math.sin(hr), 0.0, 0.0])
    qy = np.array([math.cos(hp), 0.0, math.sin(hp), 0.0])
    qz = np.array([math.cos(hy), 0.0, 0.0, math.sin(hy)])
    return Quat.from_array(qmul(qmul(qz, qy), qx))


def gravity_in_body(q: Quat) -> np.ndarray:
    """Accelerometer reading (g) of a body at rest with attitude q."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array([2 * (x * z - w * y), 2 * (w * x + y * z), 1 - 2 * (x * x + y * y)])


# ---------------------------------------------------------------- RLS

@dataclass(frozen=True)
class RlsState:
    w_est: np.ndarray
    P: np.ndarray
    lam: float = 0.995

    @classmethod
    def initial(cls, lam: float = 0.995, sigma0_sq: float = 1e3,
                w0=(0.0, 0.0, 0.0)) -> "RlsState":
        if not (0.0 < lam <= 1.0):
            raise ValueError(f"forgetting factor must lie in (0, 1], got {lam}")
        return cls(np.array(w0, dtype=float), sigma0_sq * np.eye(3), lam)

    @property
    def c(self) -> float:
        return float(self.w_est[2])


@njit
def _rls(theta, P, lam, y, phi):
    Pphi = P @ phi
    denom = lam + phi @ Pphi
    K = Pphi / denom
    e = y - phi @ theta
    th = theta + K * e
    Pn = (P - np.outer(K, phi @ P)) / lam
    Pn = 0.5 * (Pn + Pn.T)
    return th, Pn


@njit
def _rls_batch(theta, P, lam, ys, phis):
    n = ys.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        theta, P = _rls(theta, P, lam, ys[i], phis[i])
        out[i] = theta
    return out, theta, P


def rls_update(state: RlsState, y_n: float, regressor) -> tuple[RlsState, float]:
    phi = np.asarray(regressor, dtype=float)
    if not (math.isfinite(y_n) and np.all(np.isfinite(phi))):
        raise NonFiniteInput("RLS input is not finite; state left unchanged")
    th, P = _rls(state.w_est, state.P, state.lam, float(y_n), phi)
    return RlsState(th, P, state.lam), float(th[2])


def rls_run(state: RlsState, ys, regressors) -> tuple[np.ndarray, RlsState]:
    ys = np.ascontiguousarray(ys, dtype=float)
    phis = np.ascontiguousarray(regressors, dtype=float)
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(phis))):
        raise NonFiniteInput("RLS input is not finite")
    hist, th, P = _rls_batch(state.w_est.copy(), state.P.copy(), state.lam, ys, phis)
    return hist, RlsState(th, P, state.lam)


@dataclass(frozen=True)
class PhaseAccumulator:
    phi: float = 0.0


def adaptive_regressor(acc: PhaseAccumulator, omega_inst: float, dt: float
                       ) -> tuple[PhaseAccumulator, tuple[float, float, float]]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    phi = acc.phi + omega_inst * dt
    return PhaseAccumulator(phi), (math.sin(phi), math.cos(phi), 1.0)


def regressors_from_rates(omega_inst, dt: float, phi0: float = 0.0) -> np.ndarray:
    """Batch form of :func:`adaptive_regressor` (left-point accumulation)."""
    phi = phi0 + np.cumsum(np.asarray(omega_inst, dtype=float) * dt)
    return np.column_stack([np.sin(phi), np.cos(phi), np.ones_like(phi)])


IMU_COLUMNS = ("t", "gx", "gy", "gz", "ax", "ay", "az")
ESTIMATE_COLUMNS = ("t", "roll", "pitch", "yaw", "pitch_mean_c", "a", "b")


def read_imu_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    from .io import read_csv_columns

    c = read_csv_columns(path, required=IMU_COLUMNS)
    gyro = np.column_stack([c["gx"], c["gy"], c["gz"]])
    accel = np.column_stack([c["ax"], c["ay"], c["az"]])
    return c["t"], gyro, accel


def write_estimate_csv(path, t, euler_deg, rls_hist) -> None:
    from .io import write_columns

    e = np.asarray(euler_deg)
    h = np.asarray(rls_hist)
    write_columns(Path(path), ESTIMATE_COLUMNS,
                  [t, e[:, 0], e[:, 1], e[:, 2], h[:, 2], h[:, 0], h[:, 1]])
