"""Command line interface: ``sgdual <subcommand> --config run.json``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (including a
FAIL verdict).  Every output goes under ``<output_dir>/<name>/``.
``SGDUAL_THREADS`` caps the BLAS/OpenMP/numba thread pools.
"""

from __future__ import annotations

import os

if os.environ.get("SGDUAL_THREADS"):
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_v, os.environ["SGDUAL_THREADS"])

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import decay, diagnostics, eulerian, io  # noqa: E402
from .config import ConfigError, RunConfig  # noqa: E402
from .density import (HypothesisViolation, QuantizationError, TruncationError, WeightedPointCloud,  # noqa: E402
                      density_from_dict, quantize, read_cloud_csv, write_cloud_csv)
from .flow import StalenessError, StepError, integrate, make_state, record, velocity  # noqa: E402
from .geometry import GeometryError, make_domain  # noqa: E402
from .ot import DomainError, OTError, PreconditionError, solve_weights  # noqa: E402

log = logging.getLogger("sgdual")

VALIDATION_ERRORS = (ConfigError, GeometryError, HypothesisViolation, TruncationError, PreconditionError,
                     DomainError, io.CheckpointError, decay.ConfigurationError, FileNotFoundError, KeyError)
NUMERICAL_ERRORS = (OTError, StepError, StalenessError, QuantizationError, decay.StiffnessError,
                    FloatingPointError, np.linalg.LinAlgError)


class VerdictFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


def _setup(cfg: RunConfig):
    dom = make_domain(cfg["domain"])
    spec = density_from_dict(cfg["density"], dom)
    return dom, spec


def _initial_cloud(cfg: RunConfig, spec) -> WeightedPointCloud:
    q = cfg["quantize"]
    return quantize(spec, cfg["N"], cfg["seed"], tol=q["tol"], max_iter=q["max_iter"], ot_tol=cfg["ot_tol"])


def _run_dir(cfg: RunConfig) -> Path:
    d = cfg.run_dir
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


STATE_HEADER = ["id", "y1", "y2", "y3", "mass", "psi", "u1", "u2", "u3", "volume", "b1", "b2", "b3"]


def write_state_csv(path, state) -> None:
    U = velocity(state)
    y, b = state.positions, state.barycenters
    rows = [[i, *y[i], state.cloud.masses[i], state.potentials.psi[i], *U[i], state.diagram.volumes[i], *b[i]]
            for i in range(len(y))]
    io.write_csv(path, STATE_HEADER, rows)


def read_state_csv(path, domain, tol):
    rows = io.read_csv(path)
    if not rows or list(rows[0]) != STATE_HEADER:
        raise ConfigError(f"{path}: unexpected columns")
    y = np.array([[float(r["y1"]), float(r["y2"]), float(r["y3"])] for r in rows])
    m = np.array([float(r["mass"]) for r in rows])
    psi = np.array([float(r["psi"]) for r in rows])
    return y, m, psi


# --------------------------------------------------------------------------- workflows


def wf_run(cfg: RunConfig, resume: str | None = None, force: bool = False) -> int:
    dom, spec = _setup(cfg)
    out = _run_dir(cfg)
    sdir = out / "states"
    cdir = out / "checkpoints"
    sdir.mkdir(exist_ok=True)
    cdir.mkdir(exist_ok=True)
    tol = cfg["ot_tol"]
    every = cfg["output_every"]
    if resume:
        ck = io.load_checkpoint(resume, cfg.hash(), override=force)
        state = ck.state(dom, tol)
        records = ck.step_records()
        mon = diagnostics.StreamingMonitor(ck.monitor_window(dom, tol), ck.monitor["rows"], ck.monitor["count"])
        start, origin, y3_0 = ck.step, ck.t_origin, ck.y3_0
    else:
        cloud = _initial_cloud(cfg, spec)
        write_cloud_csv(cloud, out / "initial_cloud.csv")
        state = make_state(dom, cloud, 0.0, tol)
        start, origin, y3_0 = 0, 0.0, state.positions[:, 2].copy()
        records = [record(state, 0, y3_0)]
        mon = diagnostics.StreamingMonitor()
        write_state_csv(sdir / "state_000000.csv", state)
        if cfg["monitors"]:
            mon.push(state)
    total = int(np.ceil((cfg["T"] - origin) / cfg["dt"] * (1 - 1e-12))) if cfg["T"] > origin else 0
    ck_every = cfg["checkpoint_every"]

    def on_step(k, st):
        if k % every == 0 or k == total:
            write_state_csv(sdir / f"state_{k:06d}.csv", st)
            if cfg["monitors"]:
                mon.push(st)
        if ck_every and (k % ck_every == 0 or k == total):
            io.save_checkpoint(cdir / f"step_{k:06d}.json", st, k, origin, y3_0, records, cfg.hash(),
                               rng_state={"seed": cfg["seed"]}, monitor_window=mon.tail,
                               monitor_rows=mon.rows, monitor_count=mon.count)

    traj = integrate(state, cfg["dt"], cfg["T"], cfg["scheme"], cfg["stage_tol"], output_every=every,
                     start_step=start, t_origin=origin, y3_0=y3_0, on_step=on_step, keep_states=False,
                     records=records)
    rows = mon.finish() if cfg["monitors"] else []
    stored = [r for r in traj.records if r.step % every == 0 or r.step == total]
    rep = diagnostics.build_report(
        diagnostics.Trajectory([], stored, cfg["dt"], cfg["scheme"]),
        {"name": cfg.name, "seed": cfg["seed"], "N": cfg["N"], "dt": cfg["dt"], "T": cfg["T"],
         "scheme": cfg["scheme"], "config_hash": cfg.hash(),
         # no decay guarantee covers compactly supported initial data
         "compact_support": bool(spec.compact or np.isfinite(spec.support_radius()))},
        diagnostics.check_numeric_inequality(seed=cfg["seed"]), monitor_rows=rows)
    rep.write(out / "diagnostics.json")
    io.write_records_csv(out / "trajectory.csv", traj.records)
    write_cloud_csv(traj.states[-1].cloud, out / "final_cloud.csv")
    last = traj.records[-1]
    print(f"run {cfg.name}: {len(traj.records) - 1} steps to t={last.t:.6g}, "
          f"max bound margin {max(r.bound_margin for r in traj.records):.3e}")
    return 0


def wf_ot_solve(cfg: RunConfig, cloud_path: str | None = None) -> int:
    dom, spec = _setup(cfg)
    out = _run_dir(cfg)
    cloud = read_cloud_csv(cloud_path) if cloud_path else _initial_cloud(cfg, spec)
    sol = solve_weights(dom, cloud, tol=cfg["ot_tol"])
    d = sol.diagram
    F = d.volumes - cloud.masses
    io.write_csv(out / "ot_cells.csv", ["id", "psi", "volume", "b1", "b2", "b3", "mass_residual"],
                 [[i, sol.potentials.psi[i], d.volumes[i], *d.barycenters[i], F[i]] for i in range(len(cloud))])
    _write_json(out / "ot_summary.json", {"N": len(cloud), "residual": sol.residual, "iterations": sol.iterations,
                                           "tol": cfg["ot_tol"]})
    print(f"ot-solve {cfg.name}: residual {sol.residual:.3e} after {sol.iterations} Newton steps")
    return 0


def wf_recover(cfg: RunConfig, traj_dir: str | None = None) -> int:
    dom, _ = _setup(cfg)
    out = _run_dir(cfg)
    src = Path(traj_dir) if traj_dir else out / "states"
    files = sorted(src.glob("state_*.csv"))
    if len(files) < 2:
        raise ConfigError(f"{src}: need at least two stored states (run the trajectory first)")
    meta = diagnostics.DiagnosticsReport.read(out / "diagnostics.json") if (out / "diagnostics.json").exists() \
        else None
    steps = [int(f.stem.split("_")[1]) for f in files]
    times_by_step = {r["step"]: r["t"] for r in meta.records} if meta else {}
    states = []
    for k, f in zip(steps, files):
        y, m, psi = read_state_csv(f, dom, cfg["ot_tol"])
        t = times_by_step.get(k, min(k * cfg["dt"], cfg["T"]))
        states.append(make_state(dom, WeightedPointCloud(y, m), t, cfg["ot_tol"], warm_start=psi))
    edir = out / "eulerian"
    edir.mkdir(exist_ok=True)
    snaps = [eulerian.recover_trajectory(states, k) for k in range(len(states))]
    hdr = (["id", "y1", "y2", "y3", "bdot1", "bdot2", "bdot3"] + [f"H{a}{b}" for a in (1, 2, 3) for b in (1, 2, 3)]
           + [f"A{a}{b}" for a in (1, 2, 3) for b in (1, 2, 3)] + ["c1", "c2", "c3", "low_confidence"])
    for k, s in zip(steps, snaps):
        f = s.field
        io.write_csv(edir / f"eulerian_{k:06d}.csv", hdr,
                     [[i, *f.targets[i], *f.bdot[i], *f.H[i].ravel(), *f.A[i].ravel(), *f.c[i], f.low_confidence[i]]
                      for i in range(len(f.targets))])
    bat = cfg["battery"]
    battery = eulerian.TestFunctionBattery.seeded(dom, bat["count"], bat["seed"], T=states[-1].t)
    deg = bat["degree"]
    report = []
    for j, test in enumerate(battery):
        sg2 = [eulerian.residual_sg2(s, test, deg) for s in snaps]
        sg1 = eulerian.residual_sg1(snaps, test, deg)
        gaps = [eulerian.change_of_variables_check(st.diagram, st.cloud.masses, test, deg)[2] for st in states]
        report.append({"test": j, "center": list(map(float, test.center)), "radius": float(test.radius),
                       "sg1": [float(v) for v in sg1], "sg1_norm": float(np.linalg.norm(sg1)),
                       "sg2": [float(v) for v in sg2], "sg2_median_abs": float(np.median(np.abs(sg2))),
                       "gap": [float(g) for g in gaps], "gap_median": float(np.median(gaps))})
    _write_json(out / "residuals.json", {"times": [s.t for s in states], "tests": report})
    print(f"recover {cfg.name}: {len(states)} snapshots, median |sg2| "
          f"{np.median([r['sg2_median_abs'] for r in report]):.3e}, "
          f"median |sg1| {np.median([r['sg1_norm'] for r in report]):.3e}")
    return 0


def wf_decay_lab(cfg: RunConfig) -> int:
    out = _run_dir(cfg)
    dc = cfg["decay"]
    fld = decay.field_from_dict(dc["field"])
    rho0 = density_from_dict(dc["density"])
    res = decay.verify_decay_bounds(fld, rho0, dc["times"], samples=dc["samples"], seed=dc["seed"],
                               bounds=tuple(dc["bounds"]), r=dc["r"], R=dc["R"], tol=dc["tol"],
                               strict=dc["strict"])
    decay.write_bounds_csv(res, out / "bounds.csv")
    for r in res:
        print(f"{r.verdict} bound {r.bound} t={r.time:g} region {r.region}: max violation {r.max_violation:.3e}")
    if any(r.verdict != "PASS" for r in res):
        raise VerdictFailure("decay bound violated")
    return 0


def wf_steady_check(cfg: RunConfig) -> int:
    dom, spec = _setup(cfg)
    out = _run_dir(cfg)
    st = cfg["steady"]
    cloud = _initial_cloud(cfg, spec)
    state = make_state(dom, cloud, 0.0, cfg["ot_tol"])
    y0 = state.positions.copy()
    speed = float(np.linalg.norm(velocity(state), axis=1).max())
    disp = [0.0]

    def on_step(k, s):
        disp.append(float(np.linalg.norm(s.positions - y0, axis=1).max()))

    traj = integrate(state, cfg["dt"], cfg["T"], cfg["scheme"], cfg["stage_tol"], on_step=on_step,
                     keep_states=False)
    io.write_csv(out / "steady.csv", ["step", "t", "max_displacement", "bound_margin", "vertical_drift"],
                 [[r.step, r.t, d, r.bound_margin, r.vertical_drift] for r, d in zip(traj.records, disp)])
    checks = [("max_speed", speed, st["max_speed"]), ("max_displacement", max(disp), st["max_displacement"]),
              ("bound_margin", max(r.bound_margin for r in traj.records), 1e-12)]
    ok = True
    for name, val, lim in checks:
        verdict = "PASS" if val <= lim else "FAIL"
        ok &= verdict == "PASS"
        print(f"{verdict} {name} = {val:.3e} (limit {lim:g})")
    if not ok:
        raise VerdictFailure("steady state check failed")
    return 0


def wf_report(run_dir: Path) -> int:
    from . import plotting

    made = []
    if (run_dir / "diagnostics.json").exists():
        rep = diagnostics.DiagnosticsReport.read(run_dir / "diagnostics.json")
        io.write_records_csv(run_dir / "report_records.csv", rep.records)
        rows = [["steps", len(rep.records) - 1], ["max_bound_margin", rep.max_margin()],
                ["max_vertical_drift", rep.max_vertical_drift()],
                ["max_ot_residual", max(r["ot_residual"] for r in rep.records)],
                ["min_cell_volume", min(r["min_volume"] for r in rep.records)]]
        for key in ("transport_energy", "geostrophic_energy"):
            e = [r[key] for r in rep.records]
            rows.append([f"{key}_drift", max(abs(v - e[0]) for v in e)])
        if rep.inequality:
            rows.append(["inequality_violations", rep.inequality["violations"]])
            rows.append(["inequality_worst_margin", rep.inequality["worst_margin"]])
        io.write_csv(run_dir / "report_summary.csv", ["metric", "value"], rows)
        made += [run_dir / "report_records.csv", run_dir / "report_summary.csv"]
        made += plotting.plot_report(rep.records, run_dir)
    if (run_dir / "final_cloud.csv").exists():
        c = read_cloud_csv(run_dir / "final_cloud.csv")
        made.append(plotting.plot_cloud(c.positions, run_dir, "final_cloud.png", c.masses))
    if (run_dir / "bounds.csv").exists():
        made.append(plotting.plot_bounds(io.read_csv(run_dir / "bounds.csv"), run_dir))
    if not made:
        raise ConfigError(f"{run_dir}: nothing to report")
    for p in made:
        print(f"wrote {p}")
    return 0


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgdual", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=name != "report", help="run configuration JSON")
        s.add_argument("--output-dir", help="override output_dir from the config")
        return s

    r = add("run", "run the workflow selected in the config (default: trajectory)")
    r.add_argument("--resume", help="checkpoint to resume from")
    r.add_argument("--force", action="store_true", help="resume even if the config hash differs")
    o = add("ot-solve", "solve one transport problem")
    o.add_argument("--cloud", help="cloud CSV (id,y1,y2,y3,mass); default: quantize from the config")
    rc = add("recover", "recover Eulerian fields and weak residuals from stored states")
    rc.add_argument("--trajectory", help="directory of state_*.csv files")
    add("decay-lab", "check decay bounds for a synthetic field")
    rp = add("report", "render CSV tables and figures for a run directory")
    rp.add_argument("--run-dir", help="run directory (default: from --config)")
    add("steady-check", "check that the uniform state is stationary")
    return p


def _dispatch(args) -> int:
    if args.cmd == "report" and args.run_dir:
        d = Path(args.run_dir)
        if not d.is_dir():
            raise ConfigError(f"{d} is not a directory")
        return wf_report(d)
    if not args.config:
        raise ConfigError("--config or --run-dir is required")
    cfg = RunConfig.load(args.config)
    if args.output_dir:
        cfg = RunConfig.from_dict({**cfg.data, "output_dir": args.output_dir})
    cmd = args.cmd if args.cmd != "run" else cfg["workflow"]
    if cmd == "run":
        return wf_run(cfg, getattr(args, "resume", None), getattr(args, "force", False))
    if cmd == "ot-solve":
        return wf_ot_solve(cfg, getattr(args, "cloud", None))
    if cmd == "recover":
        return wf_recover(cfg, getattr(args, "trajectory", None))
    if cmd == "decay-lab":
        return wf_decay_lab(cfg)
    if cmd == "steady-check":
        return wf_steady_check(cfg)
    return wf_report(cfg.run_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except VerdictFailure as e:
        print(f"failure: {e}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
