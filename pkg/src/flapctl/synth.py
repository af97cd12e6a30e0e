"""Seeded synthetic recordings with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bench import BenchRecord


@dataclass(frozen=True)
class SynthBench:
    fs: float = 222.0
    f: float = 10.0
    zeta: float = 40.0            # deg stroke amplitude
    us_per_deg: float = 10.0
    idle_s: float = 0.5
    cycles: int = 80
    noise_F: float = 0.004        # N, 1 sigma
    noise_M: float = 2e-5         # N m, 1 sigma
    inertial_scale: float = 3.0
    aero_gain: float = 1.0


# Per component: list of (harmonic, cos coeff, sin coeff), plus a mean.
_AERO = {
    0: (0.05, [(1, 0.02, 0.03), (2, 0.01, 0.0)]),
    1: (0.0, [(1, 0.0, 0.03), (2, 0.01, 0.0)]),
    2: (0.26, [(1, 0.12, 0.05), (2, 0.06, -0.03), (3, 0.0, 0.01)]),
    3: (0.0, [(1, 5e-4, 0.0), (2, 0.0, 2e-4)]),
    4: (-1e-4, [(1, 4e-4, 3e-4), (2, 1e-4, 0.0)]),
    5: (0.0, [(1, 1e-4, 0.0), (2, 0.0, 3e-4)]),
}


def _series(tn: np.ndarray, mean: float, terms) -> np.ndarray:
    out = np.full_like(tn, mean)
    for h, a, b in terms:
        out += a * np.cos(2 * np.pi * h * tn) + b * np.sin(2 * np.pi * h * tn)
    return out


def aero_profile(tn) -> np.ndarray:
    """Injected aerodynamic force/torque over one max-to-max cycle, (L, 6)."""
    tn = np.asarray(tn, dtype=float)
    return np.column_stack([_series(tn, m, t) for m, t in (_AERO[i] for i in range(6))])


def inertial_profile(tn, scale: float = 3.0) -> np.ndarray:
    # Wing inertia loads are dominated by the 2nd harmonic of the stroke.
    tn = np.asarray(tn, dtype=float)
    amp = np.array([0.04, 0.005, 0.08, 1e-4, 5e-4, 5e-5]) * scale
    return np.column_stack([a * np.cos(4 * np.pi * tn + 0.3 * i) for i, a in enumerate(amp)])


def bench_log(cfg: SynthBench = SynthBench(), perforated: bool = False,
              seed: int = 0) -> BenchRecord:
    rng = np.random.default_rng(seed)
    T_act = cfg.cycles / cfg.f
    n = int(round((2 * cfg.idle_s + T_act) * cfg.fs))
    t = np.arange(n) / cfg.fs
    ta = t - cfg.idle_s
    active = (ta >= 0) & (ta < T_act)
    stroke = np.where(active, cfg.zeta * np.sin(2 * np.pi * cfg.f * ta), 0.0)
    # Cycle phase measured from the stroke maximum.
    tn = np.mod(cfg.f * ta - 0.25, 1.0)
    ft = np.zeros((n, 6))
    load = inertial_profile(tn, cfg.inertial_scale)
    if not perforated:
        load = load + cfg.aero_gain * aero_profile(tn)
    ft[active] = load[active]
    sig = np.array([cfg.noise_F] * 3 + [cfg.noise_M] * 3)
    ft += rng.normal(size=ft.shape) * sig
    pwm = 1500.0 + cfg.us_per_deg * np.column_stack([stroke, stroke])
    return BenchRecord(t, ft[:, :3], ft[:, 3:], pwm)


def bent_markers(angle_deg: float, axis=(0.0, 0.0, 1.0), n_markers: int = 3,
                 frames: int = 1, length: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Proximal markers along +x, distal markers bent by angle_deg about axis.

    Markers get an out-of-plane component along ``axis`` that the projection
    must discard.
    """
    a = np.asarray(axis, float) / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - a * np.dot(ref, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    th = np.radians(angle_deg)
    d = np.cos(th) * e1 + np.sin(th) * e2
    s = np.linspace(0.0, length, n_markers)
    lift = 0.01 * np.sin(np.arange(n_markers) + 1.0)
    prox = s[:, None] * e1 + lift[:, None] * a
    dist = length * e1 + s[:, None] * d + lift[::-1, None] * a
    return np.repeat(prox[None], frames, 0), np.repeat(dist[None], frames, 0)
