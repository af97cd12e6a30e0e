import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flapctl.cpg import WingbeatParams
from flapctl.errors import ConfigError, IntegrationFault
from flapctl.plant import (BODY_WEIGHT_N, CAL_ANGLE, FT_SIGNS, BodyState, Damping,
                           ForceTorque, FtMapConfig, InertiaModel, cg_at, dynamics_step,
                           ft_map, ft_mean, inertia_at, shape_factor, shaping_integral,
                           star_stroke_rate)

M = InertiaModel()
ZERO = ForceTorque((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
angles = st.floats(-1.5, 1.5)


def _flap(phi0=math.radians(40.0), f=10.0):
    w = 2 * math.pi * f
    return lambda t: (phi0 * math.sin(w * t), phi0 * w * math.cos(w * t))


# ---------------------------------------------------------------- inertia and CG

def test_inertia_minimal_at_zero():
    I0, Id = inertia_at(M, 0.0, 3.0)
    assert Id == 0.0
    for phi in np.linspace(-1.5, 1.5, 31):
        assert inertia_at(M, phi, 0.0)[0] >= I0


def test_inertia_ratio_calibration():
    # Oracle: the calibration equation evaluated directly on the shipped fields.
    ratio = 1 + 2 * M.m_wing * M.r_eff ** 2 * math.sin(math.radians(70)) ** 2 / (
        M.I_body_yy + 2 * M.m_wing * M.x_w ** 2)
    assert M.inertia_ratio() == pytest.approx(ratio, rel=1e-12)
    assert abs(ratio - 2.5) <= 0.1
    M.check_calibration()


def test_inertia_rate_sign():
    assert inertia_at(M, 0.5, 1.0)[1] > 0
    # Retraction from -70 deg toward 0 sheds inertia.
    assert inertia_at(M, -math.radians(40), 2.0)[1] < 0


def test_cg_examples():
    assert cg_at(M, 0.0) == (0.0, 0.0)
    assert cg_at(M, CAL_ANGLE)[0] == pytest.approx(0.03 * M.body_length, rel=1e-12)


@given(angles)
def test_cg_odd(phi):
    a, b = cg_at(M, phi), cg_at(M, -phi)
    assert a[0] == -b[0] and a[1] == -b[1]


def test_inertia_validation():
    with pytest.raises(ConfigError):
        InertiaModel(m_wing=-1.0)
    with pytest.raises(ConfigError):
        InertiaModel(m_wing=0.02)
    with pytest.raises(ConfigError):
        replace(M, r_eff=0.2).check_calibration()


# ---------------------------------------------------------------- force map

def _p(**kw):
    return WingbeatParams(**kw)


def test_neutral_map_has_no_moment():
    cfg = FtMapConfig()
    mean = ft_mean(cfg, _p(), _p())
    assert np.all(mean[3:] == 0.0) and mean[1] == 0.0
    assert mean[2] == pytest.approx(BODY_WEIGHT_N)
    ft = ft_map(cfg, _p(), _p(), 0.0, star_stroke_rate(_p(), 0.0))
    assert ft.M == (0.0, 0.0, 0.0) and ft.F[2] > mean[2]


def test_force_sign_suite():
    cfg = FtMapConfig()
    base = ft_mean(cfg, _p(), _p())
    assert ft_mean(cfg, _p(zeta=45.0), _p(zeta=45.0))[0] > base[0]
    assert ft_mean(cfg, _p(f=11.0), _p(f=11.0))[0] > base[0]
    assert ft_mean(cfg, _p(delta=5.0), _p(delta=5.0))[4] < 0
    assert ft_mean(cfg, _p(A=0.1), _p(A=0.1))[4] > 0
    anti_d = ft_mean(cfg, _p(delta=5.0), _p(delta=-5.0))
    anti_a = ft_mean(cfg, _p(A=0.1), _p(A=-0.1))
    assert anti_d[3] > 0 and anti_d[5] > 0
    assert anti_a[3] > 0 and anti_a[5] < 0


@pytest.mark.parametrize("key", sorted(FT_SIGNS))
def test_sign_violation_rejected(key):
    with pytest.raises(ConfigError):
        FtMapConfig(**{key: -getattr(FtMapConfig(), key)})


@pytest.mark.parametrize("A", [0.0, 1e-4, 0.2, -0.35, 0.49])
def test_shaping_integral_closed_form(A):
    w = np.linspace(0, 2 * np.pi, 200001)
    ref = np.trapezoid(np.cos(w) ** 2 / (0.5 + A * np.cos(w)), w)
    assert shaping_integral(A) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("A", [0.0, 0.15, -0.3, 0.45])
def test_cycle_mean_preserved(A):
    # Time average over one STAR cycle: dt = p/(pi f) dw.
    p = _p(A=A, f=10.0)
    w = np.linspace(0, 2 * np.pi, 400001)
    s = np.array([shape_factor(FtMapConfig(), p, star_stroke_rate(p, om)) for om in w[::40]])
    dt_dw = (0.5 + A * np.cos(w[::40])) / (math.pi * p.f)
    avg = np.trapezoid(s * dt_dw, w[::40]) * p.f
    assert avg == pytest.approx(1.0, abs=1e-9)


def test_map_profile_double_peaked():
    p = _p()
    w = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    fz = np.array([ft_map(FtMapConfig(), p, p, om, star_stroke_rate(p, om)).F[2] for om in w])
    peaks = [i for i in range(720) if fz[i] > fz[i - 1] and fz[i] >= fz[(i + 1) % 720]]
    assert len(peaks) == 2


# ---------------------------------------------------------------- dynamics

def test_constant_rate_without_torque():
    s = BodyState(theta_dot=0.7)
    for _ in range(100):
        s = dynamics_step(s, M, ZERO, 0.3, 0.0, 1e-3)
    assert s.theta_dot == pytest.approx(0.7, rel=1e-14)
    assert s.theta == pytest.approx(0.07, rel=1e-12)


def test_angular_momentum_conserved_and_closed_form():
    wing = _flap()
    L0 = inertia_at(M, 0.0, 0.0)[0] * 1.0
    s, dt = BodyState(theta_dot=1.0), 1e-4
    worst_L = worst_cf = 0.0
    for k in range(1, 20001):
        s = dynamics_step(s, M, ZERO, lambda u, t0=(k - 1) * dt: wing(t0 + u), dt=dt)
        if k % 50 == 0:
            I = inertia_at(M, wing(k * dt)[0], 0.0)[0]
            worst_L = max(worst_L, abs(I * s.theta_dot - L0) / L0)
            worst_cf = max(worst_cf, abs(s.theta_dot - L0 / I) / (L0 / I))
    assert worst_L < 1e-6 and worst_cf < 1e-6


def test_energy_varies_inversely_with_inertia():
    wing = _flap()
    s, dt = BodyState(theta_dot=2.0), 1e-4
    I0 = inertia_at(M, 0.0, 0.0)[0]
    E0 = 0.5 * I0 * 4.0
    for k in range(1, 501):
        s = dynamics_step(s, M, ZERO, lambda u, t0=(k - 1) * dt: wing(t0 + u), dt=dt)
    I = inertia_at(M, wing(500 * dt)[0], 0.0)[0]
    E = 0.5 * I * s.theta_dot ** 2
    assert E * I == pytest.approx(E0 * I0, rel=1e-8)


def test_hover_and_gravity():
    s = dynamics_step(BodyState(), M, ForceTorque((0, 0, M.m_total * 9.81), (0, 0, 0)), 0.0,
                      dt=0.01)
    assert s.vel == pytest.approx((0.0, 0.0), abs=1e-15)
    s = dynamics_step(BodyState(), M, ZERO, 0.0, dt=0.01)
    assert s.vel[1] == pytest.approx(-0.0981)


def test_damping_and_yaw():
    s = BodyState(psi_dot=1.0)
    for _ in range(10):
        s = dynamics_step(s, M, ZERO, 0.0, dt=1e-3, damping=Damping(c_psi=1e-4))
    assert 0 < s.psi_dot < 1.0
    s = dynamics_step(BodyState(), M, ForceTorque((0, 0, 0), (0, 0, 1e-4)), 0.0, dt=1e-3)
    assert s.psi_dot > 0


def test_dynamics_errors():
    with pytest.raises(ValueError):
        dynamics_step(BodyState(), M, ZERO, 0.0, dt=0.0)
    with pytest.raises(IntegrationFault):
        dynamics_step(BodyState(theta_dot=math.nan), M, ZERO, 0.0)
