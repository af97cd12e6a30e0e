"""``flapctl`` command line.

Exit codes: 0 success, 1 pipeline fault, 2 usage or parse error (including
missing input files), 3 configuration that violates a model invariant.
Each run writes its CSV outputs and a ``manifest.json`` with the resolved
config, library versions, seed and SHA-256 checksums of every output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import (COMMANDS, EXIT_INVALID, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE,
                     ConfigLoadError, RunConfig, build_bench, build_cpg, build_fit,
                     build_metrics, build_scenario, build_star, load_config)
from .errors import FlapctlError

log = logging.getLogger("flapctl")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, outputs: list[Path], status: str, summary: dict,
                   error: str = "") -> Path:
    man = {
        "status": status,
        "error": error,
        **cfg.echo(),
        "versions": _versions(),
        "outputs": {p.name: sha256(p) for p in sorted(outputs, key=lambda p: p.name)},
        "summary": summary,
    }
    path = cfg.out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


# ---------------------------------------------------------------- pipelines

def run_star(cfg: RunConfig):
    from .io import write_columns
    from .star import PhaseState, measured_frequency, trajectory

    s = cfg["star"]
    params = build_star(s)
    steps = int(round(s["duration"] / s["dt"]))
    tr = trajectory(PhaseState(), params, float(s["dt"]), steps, int(s["stride"]))
    y = s["zeta"] * np.sin(tr.omega) + s["delta"]
    path = write_columns(cfg.out / "star_trajectory.csv", ("t", "omega", "omega_dot", "y", "p"),
                         [tr.t, tr.omega, tr.omega_dot, y, tr.p])
    f_meas = measured_frequency(tr.t, tr.omega)
    return [path], {"measured_period": 1.0 / f_meas, "samples": int(tr.t.size)}


def _cpg_commands(s: dict, n: int, f_servo: float):
    t = np.arange(n) / f_servo
    if s["input"]:
        from .cpg import read_command_csv

        c = read_command_csv(s["input"])
        return c["A_L"], c["A_R"], c["delta_L"], c["delta_R"]
    if s["profile"] == "constant":
        A = np.full(n, float(s["A"]))
    elif s["profile"] == "step":
        A = np.where(t < s["t_step"], float(s["A"]), float(s["A_step"]))
    else:
        A = s["A"] + s["A_amp"] * np.sin(2 * math.pi * s["A_freq"] * t)
    d = np.full(n, float(s["delta"]))
    return A, A, d, d


def run_cpg_gen(cfg: RunConfig):
    from .cpg import ServoCalib, run_cpg, servo_pwm, write_stream_csv

    s = cfg["cpg"]
    params, sm = build_cpg(s)
    n = int(round(s["duration"] * sm.f_servo))
    AL, AR, dL, dR = _cpg_commands(s, n, sm.f_servo)
    ext = bool(s["extended"])
    runL = run_cpg(params, sm, AL, dL, extended=ext)
    runR = run_cpg(params, sm, AR, dR, extended=ext)
    calib = ServoCalib()
    rows = []
    sat = 0
    for k in range(len(AL)):
        pl, sl = servo_pwm(runL.y[k], calib)
        pr, sr = servo_pwm(runR.y[k], calib)
        sat += int(sl) + int(sr)
        rows.append((k, AL[k], AR[k], dL[k], dR[k], runL.y[k], runR.y[k], pl, pr))
    path = cfg.out / "cpg_stream.csv"
    write_stream_csv(path, rows)
    dy = float(np.max(np.abs(np.diff(runL.y)))) if len(AL) > 1 else 0.0
    return [path], {"ticks": len(rows), "servo_saturations": sat, "max_step_deg": dy}


def _sim_summary(simlog, tail: float = 5.0) -> dict:
    t = simlog.col("t")
    if t.size == 0:
        return {}
    m = t >= t[-1] - tail
    return {"pitch_mean_tail": float(np.mean(simlog.col("pitch_mean")[m])),
            "yaw_tail": float(np.mean(simlog.col("yaw")[m])),
            "theta_tail_deg": float(np.degrees(np.mean(simlog.col("theta")[m]))),
            "t_end": float(t[-1])}


def run_sim(cfg: RunConfig):
    from .sim import SimulationAborted, simulate

    scen = build_scenario(cfg)
    path = cfg.out / "sim_log.csv"
    try:
        simlog = simulate(scen, float(cfg["sim"]["duration"]))
    except SimulationAborted as exc:
        partial = cfg.out / "sim_log.partial.csv"
        exc.partial.to_csv(partial)
        raise _PipelineFault(str(exc), [partial], {"rows": int(exc.partial.data.shape[0])}) \
            from exc
    simlog.to_csv(path)
    return [path], _sim_summary(simlog)


def _sweep_one(cfg: RunConfig, mode: str, p: float, y: float):
    from .sim import SimulationAborted, simulate

    name = f"{mode}_p{p:+g}_y{y:+g}"
    s = cfg["sim"]
    scen = build_scenario(cfg, mode=mode, pitch=(s["pitch"][0], p), yaw=(s["yaw"][0], y))
    path = cfg.out / f"sweep_{name}.csv"
    try:
        simlog = simulate(scen, float(s["duration"]))
        ok, err = True, ""
    except SimulationAborted as exc:
        simlog, ok, err = exc.partial, False, str(exc)
        path = cfg.out / f"sweep_{name}.partial.csv"
    simlog.to_csv(path)
    summ = _sim_summary(simlog)
    return name, mode, p, y, ok, err, path, summ


def run_sweep(cfg: RunConfig):
    from .io import write_rows

    sw = cfg["sweep"]
    jobs = [(m, float(p), float(y)) for m in sw["modes"] for p in sw["pitch_steps"]
            for y in sw["yaw_steps"]]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as ex:
        results = list(ex.map(lambda a: _sweep_one(cfg, *a), jobs))
    results.sort(key=lambda r: r[0])
    rows = []
    for name, mode, p, y, ok, err, _, summ in results:
        pm = summ.get("pitch_mean_tail", math.nan)
        yw = summ.get("yaw_tail", math.nan)
        rows.append((name, mode, p, y, int(ok), pm, pm - p, yw, yw - y))
    spath = write_rows(cfg.out / "sweep_summary.csv",
                       ("scenario", "mode", "pitch_ref", "yaw_ref", "ok", "pitch_mean_tail",
                        "pitch_err", "yaw_tail", "yaw_err"), rows)
    outputs = [r[6] for r in results] + [spath]
    failed = [f"{r[0]}: {r[5]}" for r in results if not r[4]]
    summary = {"scenarios": len(results), "failed": len(failed)}
    if failed:
        raise _PipelineFault("; ".join(failed), outputs, summary)
    return outputs, summary


def run_fit(cfg: RunConfig):
    from .io import write_columns
    from .morphology import (fit_periodic_smoothing_spline, forewing_model, read_contour_csv,
                             write_control_points_csv)

    s = build_fit(cfg["fit"])
    outputs = []
    if s["input"]:
        pts = read_contour_csv(s["input"])
    else:
        rng = np.random.default_rng(cfg.seed)
        pts = forewing_model().resample(int(s["N"]))
        pts = pts + rng.normal(0.0, float(s["noise"]), pts.shape)
        outputs.append(write_columns(cfg.out / "contour_input.csv", ("x", "y"), pts.T))
    model, rep = fit_periodic_smoothing_spline(pts, float(s["alpha"]), int(s["n"]) or None,
                                               int(s["M"]))
    cp = cfg.out / "control_points.csv"
    write_control_points_csv(cp, model)
    dense = model.resample(int(s["M"]))
    outputs.append(cp)
    outputs.append(write_columns(cfg.out / "resample.csv", ("x", "y"), dense.T))
    outputs.append(write_columns(cfg.out / "residuals.csv", ("j", "e"),
                                 [np.arange(1, rep.N + 1), rep.e]))
    summ = {"N": rep.N, "n": rep.n, "rms": rep.rms, "p95": rep.p95,
            "reduction_pct": 100.0 * (1.0 - rep.n / rep.N)}
    return outputs, summ


def run_metrics(cfg: RunConfig):
    from .io import write_rows
    from .morphology import morphometrics, write_metrics_report

    mc = build_metrics(cfg["metrics"])
    res = morphometrics(mc, float(cfg["metrics"]["U"]))
    rp = cfg.out / "metrics.txt"
    write_metrics_report(rp, mc, res)
    cp = write_rows(cfg.out / "metrics.csv", ("quantity", "value"),
                    [(k, getattr(res, k)) for k in ("AR", "WL", "Re", "k", "U")])
    return [rp, cp], {k: getattr(res, k) for k in ("AR", "WL", "Re", "k")}


def run_bench(cfg: RunConfig):
    from . import bench
    from .synth import SynthBench, bench_log

    s = cfg["bench"]
    spec = build_bench(s)
    outputs = []
    if s["intact"]:
        intact = bench.read_bench_csv(s["intact"])
        perf = bench.read_bench_csv(s["perforated"])
        sweep_recs = {}
    else:
        sb = SynthBench(fs=spec.fs, cycles=int(s["cycles"]))
        intact = bench_log(sb, False, cfg.seed)
        perf = bench_log(sb, True, cfg.seed + 1)
        for nm, rec in (("bench_intact.csv", intact), ("bench_perforated.csv", perf)):
            p = cfg.out / nm
            bench.write_bench_csv(p, rec)
            outputs.append(p)
        sweep_recs = {float(g): bench_log(replace(sb, aero_gain=1.0 + float(g)), False,
                                          cfg.seed + 2 + i)
                      for i, g in enumerate(s["sweep_settings"])}
    res = bench.analyze(intact, perf, spec, int(s["grid"]), float(s["threshold"]),
                        int(s["debounce"]))
    for nm, prof in (("intact", res.intact), ("perforated", res.perforated),
                     ("aero", res.aero)):
        p = cfg.out / f"profile_{nm}.csv"
        bench.write_profile_csv(p, prof)
        outputs.append(p)
    p = cfg.out / "polar_aero.csv"
    bench.write_polar_csv(p, res.aero)
    outputs.append(p)
    p = cfg.out / "impulse.csv"
    bench.write_impulse_csv(p, res.impulse)
    outputs.append(p)
    if sweep_recs:
        runs = {k: bench.record_cycles(r, spec, float(s["threshold"]), int(s["debounce"]))
                for k, r in sweep_recs.items()}
        p = cfg.out / "sweep_stats.csv"
        bench.write_sweep_csv(p, bench.modulation_sweep_stats(runs))
        outputs.append(p)
    return outputs, {"T_cycle": res.T_cycle, "n_cycles": res.aero.n_cycles}


PIPELINES = {"star-gen": run_star, "cpg-gen": run_cpg_gen, "sim-run": run_sim,
             "sim-sweep": run_sweep, "fit-contour": run_fit, "metrics": run_metrics,
             "bench-analyze": run_bench}


class _PipelineFault(Exception):
    def __init__(self, message, outputs, summary):
        super().__init__(message)
        self.outputs = outputs
        self.summary = summary


def dispatch(cfg: RunConfig) -> int:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {cfg.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        outputs, summary = PIPELINES[cfg.command](cfg)
    except _PipelineFault as exc:
        write_manifest(cfg, exc.outputs, "failed", exc.summary, str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (FlapctlError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        write_manifest(cfg, [], "failed", {}, str(exc))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    missing = [p for p in outputs if not Path(p).is_file()]
    if missing:
        print(f"error: pipeline did not produce {missing}", file=sys.stderr)
        return EXIT_PIPELINE
    write_manifest(cfg, outputs, "ok", summary)
    for p in outputs:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flapctl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override a config entry, e.g. star.A=0.2 (repeatable)")
    common.add_argument("--seed", type=int, help="seed for synthetic noise")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default $FLAPCTL_OUT/<command>)")
    common.add_argument("--jobs", type=int, help="worker threads for sim-sweep")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "star-gen": "integrate the phase law and write a trajectory",
        "cpg-gen": "drive both wing oscillators through a command stream",
        "sim-run": "closed-loop flight simulation",
        "sim-sweep": "parallel sweep of simulation scenarios",
        "fit-contour": "periodic smoothing-spline fit of a wing contour",
        "metrics": "aspect ratio, wing loading, Reynolds number, reduced frequency",
        "bench-analyze": "force-torque bench pipeline (synthetic data if no inputs)",
    }
    for c in COMMANDS:
        sub.add_parser(c, parents=[common], help=helps[c])
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not args.command:
        ap.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.command, args.seed, args.out, args.jobs)
    except ConfigLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return dispatch(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
