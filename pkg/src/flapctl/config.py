"""TOML run configuration: defaults, dotted overrides, validation.

Every section is validated by constructing the domain objects it feeds, so a
config that loads cleanly cannot fail a module invariant later. Load errors
carry the process exit code they map to.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .errors import FlapctlError

COMMANDS = ("star-gen", "cpg-gen", "sim-run", "sim-sweep", "fit-contour", "metrics",
            "bench-analyze")

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2
EXIT_INVALID = 3

OUT_ENV = "FLAPCTL_OUT"

DEFAULTS: dict = {
    "star": {"f": 10.0, "A": 0.3, "variant": "cosine", "extended": False,
             "duration": 2.0, "dt": 1e-5, "stride": 10, "zeta": 40.0, "delta": 0.0},
    "cpg": {"zeta": 40.0, "f": 10.0, "delta": 0.0, "A": 0.0, "mech_limit": 80.0,
            "f_servo": 100.0, "f_c": 2.0, "filtered": True, "delta_slew": 200.0,
            "extended": True, "duration": 5.0, "profile": "step",
            "A_step": 0.4, "t_step": 1.0, "A_amp": 0.3, "A_freq": 1.0, "input": ""},
    "allocation": {"mode": "offset", "sign_pitch_offset": -1, "sign_pitch_A": 1,
                   "sign_yaw": 1, "sign_yaw_A": -1, "k_p2delta": 1.0, "k_y2delta": 1.0,
                   "k_p2A": 0.05, "k_y2A": 0.05, "A0": 0.0, "delta_limit": 20.0,
                   "A_limit": 0.2},
    "controller": {"beta": 0.1, "lam": 0.995, "sigma0_sq": 1e3, "pitch_gains": [],
                   "yaw_gains": []},
    "ftmap": {},
    "plant": {},
    "sim": {"duration": 20.0, "physics_rate": 1000.0, "closed_loop": True,
            "t_step": 5.0, "pitch": [0.0, 10.0], "yaw": [0.0, 0.0],
            "theta0": 0.0, "theta_dot0": 0.0, "psi0": 0.0,
            "imu_noise_gyro": 0.0, "imu_noise_accel": 0.0, "setpoints": ""},
    "sweep": {"modes": ["offset", "timing"], "pitch_steps": [-10.0, 10.0],
              "yaw_steps": [0.0]},
    "fit": {"input": "", "alpha": 0.5, "n": 0, "M": 1000, "N": 477, "noise": 0.5},
    "metrics": {"m": 0.026, "b": 0.60, "S": 54916.8e-6, "c_bar": 0.0886, "V": 1.03,
                "f": 10.0, "nu": 1.63e-5, "g": 9.81, "U": 1.03},
    "bench": {"intact": "", "perforated": "", "order": 4, "cutoff": 50.0, "fs": 222.0,
              "grid": 200, "threshold": 20.0, "debounce": 3, "cycles": 84,
              "sweep_settings": [0.0, 0.1, 0.2]},
}

# Sections whose keys are free-form dataclass fields validated on construction.
_OPEN_SECTIONS = ("ftmap", "plant")
_INPUT_KEYS = (("cpg", "input"), ("sim", "setpoints"), ("fit", "input"),
               ("bench", "intact"), ("bench", "perforated"))


class ConfigLoadError(FlapctlError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    sections: dict
    out: Path
    seed: int = 0
    jobs: int = 1
    overrides: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, key: str) -> dict:
        return self.sections[key]

    def inputs(self) -> dict[str, Path]:
        return {f"{s}.{k}": Path(self.sections[s][k]) for s, k in _INPUT_KEYS
                if self.sections[s].get(k)}

    def echo(self) -> dict:
        return {"command": self.command, "seed": self.seed, "jobs": self.jobs,
                "overrides": dict(self.overrides), "config": copy.deepcopy(self.sections)}


def parse_value(text: str):
    """A TOML literal if it parses as one, else the raw string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or "." not in key.strip():
            raise ConfigLoadError(f"override {item!r} must look like section.key=value",
                                  EXIT_USAGE)
        out[key.strip()] = parse_value(val.strip())
    return out


def _merge(base: dict, new: dict, where: str = "") -> None:
    for k, v in new.items():
        path = f"{where}{k}"
        if k not in base:
            if where.rstrip(".") in _OPEN_SECTIONS:
                base[k] = v
                continue
            raise ConfigLoadError(f"unknown configuration key '{path}'", EXIT_INVALID)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigLoadError(f"'{path}' must be a table", EXIT_INVALID)
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def _apply_override(sections: dict, key: str, value) -> None:
    sec, _, name = key.partition(".")
    if sec not in sections:
        raise ConfigLoadError(f"unknown configuration section '{sec}'", EXIT_INVALID)
    _merge(sections, {sec: {name: value}})


def load_config(path=None, overrides=None, command: str | None = None,
                seed: int | None = None, out=None, jobs: int | None = None) -> RunConfig:
    """Parse, merge defaults, apply overrides last, and validate."""
    sections = copy.deepcopy(DEFAULTS)
    top: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigLoadError(f"config file not found: {p}", EXIT_USAGE)
        try:
            doc = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigLoadError(f"{p}: TOML parse error: {exc}", EXIT_USAGE) from exc
        top = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        _merge(sections, {k: v for k, v in doc.items() if isinstance(v, dict)})
    ov = overrides if isinstance(overrides, dict) else parse_overrides(overrides)
    for k, v in ov.items():
        _apply_override(sections, k, v)
    cmd = command or top.get("command")
    if cmd not in COMMANDS:
        raise ConfigLoadError(f"unknown or missing command {cmd!r}; choose from "
                              f"{', '.join(COMMANDS)}", EXIT_USAGE)
    seed = int(top.get("seed", 0) if seed is None else seed)
    jobs = int(top.get("jobs", 1) if jobs is None else jobs)
    if jobs < 1:
        raise ConfigLoadError("--jobs must be at least 1", EXIT_INVALID)
    out_dir = Path(out or top.get("out") or
                   Path(os.environ.get(OUT_ENV, "flapctl_runs")) / cmd)
    cfg = RunConfig(cmd, sections, out_dir, seed, jobs, ov, str(path or ""))
    for name, p in cfg.inputs().items():
        if not p.is_file():
            raise ConfigLoadError(f"input file for {name} not found: {p}", EXIT_USAGE)
    validate(cfg)
    return cfg


# ---------------------------------------------------------------- builders

def _gains(v, default):
    from .control import PidGains

    if not v:
        return default
    return PidGains(*[float(x) for x in v])


def build_star(s: dict):
    from .star import A_LIMIT, StarParams, check_admissible

    check_admissible(s["A"], A_LIMIT, strict=True)
    if not (s["duration"] > 0 and s["dt"] > 0 and int(s["stride"]) >= 1):
        raise ValueError("star duration, dt and stride must be positive")
    return StarParams(float(s["f"]), float(s["A"]), s["variant"], bool(s["extended"]))


def build_cpg(s: dict):
    from .cpg import SmoothingConfig, WingbeatParams
    from .star import A_LIMIT, check_admissible

    for k in ("A", "A_step", "A_amp"):
        check_admissible(s[k], A_LIMIT, strict=True)
    params = WingbeatParams(float(s["zeta"]), float(s["f"]), float(s["delta"]),
                            float(s["A"]), float(s["mech_limit"]))
    if s["filtered"]:
        sm = SmoothingConfig.from_cutoff(float(s["f_c"]), float(s["f_servo"]),
                                         float(s["delta_slew"]))
    else:
        sm = SmoothingConfig.unfiltered(float(s["f_servo"]))
    sm.check_against(params.f)
    if s["profile"] not in ("constant", "step", "sine"):
        raise ValueError(f"cpg.profile must be constant, step or sine, got {s['profile']!r}")
    if s["profile"] == "sine":
        check_admissible(abs(float(s["A"])) + abs(float(s["A_amp"])), A_LIMIT, strict=True)
    return params, sm


def build_scenario(c: RunConfig, mode: str | None = None, pitch=None, yaw=None):
    from .control import Allocation, AllocationMode, ControllerConfig, SetpointSchedule
    from .plant import BodyState, FtMapConfig, InertiaModel
    from .sim import Scenario
    import math

    al = dict(c["allocation"])
    if mode is not None:
        al["mode"] = mode
    alloc = Allocation(**al)
    params, sm = build_cpg(c["cpg"])
    ctl = c["controller"]
    ctrl = ControllerConfig(alloc, _gains(ctl["pitch_gains"], None),
                            _gains(ctl["yaw_gains"], None), float(ctl["beta"]),
                            float(ctl["lam"]), float(ctl["sigma0_sq"]), params, sm,
                            extended=bool(c["cpg"]["extended"]))
    s = c["sim"]
    if s["setpoints"]:
        from .control import read_setpoint_schedule

        sp = read_setpoint_schedule(s["setpoints"])
    else:
        sp = SetpointSchedule.step(float(s["t_step"]), tuple(pitch or s["pitch"]),
                                   tuple(yaw or s["yaw"]))
    init = BodyState(math.radians(s["theta0"]), math.radians(s["theta_dot0"]),
                     math.radians(s["psi0"]))
    return Scenario(ctrl, InertiaModel(**c["plant"]), FtMapConfig(**c["ftmap"]), sp,
                    float(s["physics_rate"]), bool(s["closed_loop"]), initial=init,
                    imu_noise_gyro=float(s["imu_noise_gyro"]),
                    imu_noise_accel=float(s["imu_noise_accel"]), seed=c.seed)


def build_fit(s: dict) -> dict:
    if not (0 < s["alpha"]):
        raise ValueError("fit.alpha must be positive")
    if s["n"] and int(s["n"]) < 4:
        raise ValueError("fit.n must be at least 4 (or 0 for automatic selection)")
    if int(s["M"]) < 3 or int(s["N"]) < 8 or s["noise"] < 0:
        raise ValueError("fit.M >= 3, fit.N >= 8 and fit.noise >= 0 are required")
    return s


def build_metrics(s: dict):
    from .morphology import MorphoConfig

    names = {f.name for f in fields(MorphoConfig)}
    cfg = MorphoConfig(**{k: float(v) for k, v in s.items() if k in names})
    if not s["U"] > 0:
        raise ValueError("metrics.U must be positive")
    return cfg


def build_bench(s: dict):
    from .bench import FilterSpec

    spec = FilterSpec(int(s["order"]), float(s["cutoff"]), float(s["fs"]))
    if int(s["grid"]) < 2 or int(s["debounce"]) < 1 or int(s["cycles"]) < 4:
        raise ValueError("bench.grid >= 2, bench.debounce >= 1, bench.cycles >= 4 required")
    if bool(s["intact"]) != bool(s["perforated"]):
        raise ValueError("bench.intact and bench.perforated must be given together")
    return spec


def validate(c: RunConfig) -> None:
    """Construct every domain object the command touches; map failures to exit 3."""
    try:
        cmd = c.command
        if cmd == "star-gen":
            build_star(c["star"])
        elif cmd == "cpg-gen":
            build_cpg(c["cpg"])
        elif cmd == "sim-run":
            build_scenario(c)
        elif cmd == "sim-sweep":
            for m in c["sweep"]["modes"]:
                build_scenario(c, mode=m)
            if not c["sweep"]["pitch_steps"] or not c["sweep"]["yaw_steps"]:
                raise ValueError("sweep needs at least one pitch and one yaw step")
        elif cmd == "fit-contour":
            build_fit(c["fit"])
        elif cmd == "metrics":
            build_metrics(c["metrics"])
        elif cmd == "bench-analyze":
            build_bench(c["bench"])
        if cmd in ("sim-run", "sim-sweep") and not c["sim"]["duration"] > 0:
            raise ValueError("sim.duration must be positive")
    except ConfigLoadError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigLoadError(f"invalid configuration: {exc}", EXIT_INVALID) from exc
