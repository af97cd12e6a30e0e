import math

import numpy as np
import pytest

from flapctl.control import Allocation, ControllerConfig, SetpointSchedule
from flapctl.cpg import SmoothingConfig
from flapctl.sim import LOG_COLUMNS, Scenario, SimulationAborted, cycle_average, simulate

ACTIVE_SIGNS = {"offset": ("sign_pitch_offset", "sign_yaw"),
                "timing": ("sign_pitch_A", "sign_yaw_A")}


def _window_mean(log, col, t0, t1):
    t = log.col("t")
    return log.col(col)[(t > t0) & (t < t1)].mean()


def test_open_loop_undulation_at_flapping_frequency():
    log = simulate(Scenario(closed_loop=False), 3.0)
    t, th = log.col("t"), log.col("theta")
    m = t > 1.0
    x = th[m] - np.polyval(np.polyfit(t[m], th[m], 2), t[m])
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, t[1] - t[0])
    assert freqs[np.argmax(spec[1:]) + 1] == pytest.approx(10.0, abs=0.5)
    assert np.ptp(x) > math.radians(0.05)


def test_log_layout():
    log = simulate(Scenario(), 0.1)
    assert log.data.shape == (10, len(LOG_COLUMNS))
    assert log.col("t")[0] == pytest.approx(0.01)


@pytest.mark.parametrize("mode", ["offset", "timing"])
@pytest.mark.parametrize("step", [10.0, -10.0])
def test_closed_loop_pitch_step(mode, step):
    sc = Scenario.for_mode(mode, setpoints=SetpointSchedule.step(1.0, pitch=(0.0, step)))
    log = simulate(sc, 20.0)
    assert abs(_window_mean(log, "pitch_mean", 15.0, 20.0) - step) < 2.0
    assert np.all(np.abs(np.degrees(log.col("theta"))) < 90.0)


@pytest.mark.parametrize("mode", ["offset", "timing"])
def test_yaw_step_monotone_with_sign(mode):
    sc = Scenario.for_mode(mode, setpoints=SetpointSchedule.step(1.0, yaw=(0.0, 30.0)))
    log = simulate(sc, 15.0)
    t, yc = cycle_average(log.col("t"), log.col("yaw"), 10.0)
    after = yc[t > 1.1]
    assert np.all(np.diff(after) > -1e-6)
    assert np.all(after <= 30.0 + 1e-6)
    assert after[-1] == pytest.approx(30.0, abs=0.5)
    # Yaw rate of the matching sign within 2 s of the step.
    rate = log.col("psi_dot")[(log.col("t") > 1.0) & (log.col("t") < 3.0)]
    assert rate.max() > 0


@pytest.mark.parametrize("mode", ["offset", "timing"])
def test_flipping_active_sign_reverses_response(mode):
    pitch_key, yaw_key = ACTIVE_SIGNS[mode]
    cases = (("pitch_mean", pitch_key, SetpointSchedule.step(1.0, pitch=(0.0, 10.0))),
             ("yaw", yaw_key, SetpointSchedule.step(1.0, yaw=(0.0, 30.0))))
    for col, key, sp in cases:
        moves = []
        for al in (Allocation(mode=mode), Allocation(mode=mode).flipped(key)):
            log = simulate(Scenario.for_mode(mode, allocation=al, setpoints=sp), 3.0)
            moves.append(_window_mean(log, col, 2.5, 3.0) - _window_mean(log, col, 0.5, 1.0))
        assert moves[0] > 0 > moves[1], (col, key, moves)


def test_deterministic():
    sc = Scenario(setpoints=SetpointSchedule.step(0.5, pitch=(0.0, 5.0)), imu_noise_gyro=0.01,
                  imu_noise_accel=0.01, seed=3)
    a, b = simulate(sc, 2.0), simulate(sc, 2.0)
    assert a.data.tobytes() == b.data.tobytes()


def test_bad_setpoint_aborts_with_partial_log():
    sp = SetpointSchedule.step(1.0, pitch=(0.0, math.nan))
    with pytest.raises(SimulationAborted) as ei:
        simulate(Scenario(setpoints=sp), 2.0)
    part = ei.value.partial
    assert not part.ok and part.data.shape[0] == 100
    assert np.all(np.isfinite(part.data[:, :19]))


def test_physics_rate_must_divide():
    with pytest.raises(ValueError):
        Scenario(physics_rate=1050.0)
    sc = Scenario(controller=ControllerConfig(smoothing=SmoothingConfig.from_cutoff()))
    assert sc.substeps == 10
