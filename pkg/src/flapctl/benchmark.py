"""Time the compiled kernels against the interpreted fallback.

    python -m flapctl.benchmark [--repeat N] [--scale S]

The fallback numbers come from a child process started with
FLAPCTL_DISABLE_NUMBA=1, so nested kernels are interpreted too. Each case
checks that both paths agree numerically before timing is trusted.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases(scale: float):
    from .cpg import SmoothingConfig, WingbeatParams, run_cpg
    from .estimation import Quat, RlsState, madgwick_run, regressors_from_rates, rls_run
    from .morphology import forewing_model
    from .sim import Scenario, simulate
    from .star import PhaseState, StarParams, trajectory

    rng = np.random.default_rng(0)
    n = max(int(2000 * scale), 10)
    A = 0.3 * np.sin(2 * np.pi * np.arange(5 * n) / 100.0)
    gyro = rng.normal(0.0, 0.2, (n, 3))
    accel = np.tile([0.0, 0.0, 1.0], (n, 1)) + rng.normal(0.0, 0.02, (n, 3))
    t = np.arange(n) * 0.01
    phis = regressors_from_rates(np.full(n, 20 * np.pi), 0.01)
    ys = 35 * np.sin(np.arange(n) * 0.2 * np.pi)
    model = forewing_model()
    us = np.linspace(0.0, 1.0, n, endpoint=False)

    return {
        "star_rk4": lambda: trajectory(PhaseState(), StarParams(10.0, 0.3), 1e-5,
                                       int(10 * n), 10).omega[-1],
        "cpg_run": lambda: run_cpg(WingbeatParams(), SmoothingConfig.from_cutoff(),
                                   A).y[-1],
        "madgwick": lambda: madgwick_run(Quat(), t, gyro, accel, 0.1)[0][-1, 0],
        "rls": lambda: rls_run(RlsState.initial(), ys, phis)[0][-1, 0],
        "spline_eval": lambda: model.evaluate(us)[-1, 0],
        "plant_sim": lambda: simulate(Scenario(), 0.001 * n).data[-1, 3],
    }


def run_suite(repeat: int, scale: float) -> dict:
    from ._accel import NUMBA_ENABLED

    out = {"numba": NUMBA_ENABLED, "cases": {}}
    for name, fn in _cases(scale).items():
        t0 = time.perf_counter()
        value = float(fn())   # first call includes compilation
        first = time.perf_counter() - t0
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["cases"][name] = {"first": first, "best": best, "value": value}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m flapctl.benchmark")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        print(json.dumps(run_suite(args.repeat, args.scale)))
        return 0
    fast = run_suite(args.repeat, args.scale)
    env = dict(os.environ, FLAPCTL_DISABLE_NUMBA="1")
    proc = subprocess.run([sys.executable, "-m", "flapctl.benchmark", "--child",
                           "--repeat", str(max(1, args.repeat // 2)), "--scale",
                           str(args.scale)], env=env, capture_output=True, text=True,
                          check=True)
    slow = json.loads(proc.stdout.strip().splitlines()[-1])
    print(f"{'case':<12} {'numba [s]':>11} {'python [s]':>11} {'speedup':>9} "
          f"{'jit compile [s]':>16}  agree")
    ok = True
    for name, c in fast["cases"].items():
        s = slow["cases"][name]
        agree = np.isclose(c["value"], s["value"], rtol=1e-9, atol=1e-12)
        ok &= bool(agree)
        print(f"{name:<12} {c['best']:>11.5f} {s['best']:>11.5f} "
              f"{s['best'] / c['best']:>8.1f}x {c['first'] - c['best']:>16.3f}  "
              f"{'yes' if agree else 'NO'}")
    if not fast["numba"]:
        print("note: numba unavailable or disabled in this process; both columns interpreted")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
