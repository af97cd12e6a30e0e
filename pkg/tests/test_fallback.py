import json
import os
import subprocess
import sys

import pytest

from flapctl import NUMBA_ENABLED
from flapctl.benchmark import run_suite


def _child(env_value):
    env = dict(os.environ, FLAPCTL_DISABLE_NUMBA=env_value)
    code = ("import json, flapctl; from flapctl.benchmark import run_suite; "
            "print(json.dumps(run_suite(0, 0.05)))")
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def test_env_flag_selects_interpreted_kernels():
    slow = _child("1")
    assert slow["numba"] is False


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba not active in this process")
def test_fallback_matches_compiled():
    fast = run_suite(0, 0.05)
    slow = _child("1")
    assert set(fast["cases"]) == set(slow["cases"])
    for name, c in fast["cases"].items():
        assert slow["cases"][name]["value"] == pytest.approx(c["value"], rel=1e-9, abs=1e-12), name
