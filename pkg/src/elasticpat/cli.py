"""Command-line front end: ``elasticpat {forward,reconstruct,visibility,oracle,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Experiment, parse_config, raw_config
from .errors import ConfigError, ElasticPATError, NoProgress, SolverError
from .fields import VectorField
from .formats import read_ewf, read_trace, sha256, write_csv, write_ewf, write_state, write_trace
from .neumann import ReconstructionReport, assemble_small_oracle, config_echo, reconstruct
from .solver import BoundaryTrace, forward_with_energy
from .visibility import certify_visibility

log = logging.getLogger("elasticpat")

PATH_KEYS = {
    "medium": ("lambda_file", "mu_file"),
    "phantom": ("path",),
    "reconstruction": ("trace", "ground_truth"),
}


def _absolute_raw(exp: Experiment) -> dict:
    """Config text with file references made absolute, so a manifest stands on its own."""
    raw = copy.deepcopy(exp.raw)
    for sec, keys in PATH_KEYS.items():
        for k in keys:
            v = raw.get(sec, {}).get(k, "").strip()
            if v and v != "phantom" and not Path(v).is_absolute():
                raw[sec][k] = str((exp.base / v).resolve())
    return raw


def _manifest(out: Path, command: str, exp: Experiment, files: list[str], extra: dict | None = None, status="ok"):
    problem = exp.problem()
    doc = {
        "command": command,
        "version": __version__,
        "status": status,
        "config": _absolute_raw(exp),
        "derived": config_echo(problem),
        "outputs": {name: sha256(out / name) for name in sorted(files)},
    }
    if extra:
        doc["results"] = extra
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"
    (out / f"manifest-{command}.json").write_text(text)


def cmd_forward(exp: Experiment, out: Path) -> int:
    problem = exp.problem()
    f = exp.phantom()
    every = exp.section("solver").int("energy_every", 10)
    trace, state, rows = forward_with_energy(problem, f, every=every)
    write_trace(out / "trace.ebt", problem.sample_dt, trace.points, trace.values)
    write_state(out / "final_state.ews", state.u.data, state.ut.data, state.time)
    write_csv(
        out / "energy.csv",
        ("t", "inside", "exterior", "layer", "absorbed", "total"),
        [(r.t, r.inside, r.exterior, r.layer, r.absorbed, r.total) for r in rows],
    )
    files = ["trace.ebt", "final_state.ews", "energy.csv"]
    _manifest(out, "forward", exp, files, {"initial_energy": rows[0].total, "final_total": rows[-1].total})
    log.info("forward: %d steps of dt=%.6g, %d surface nodes", problem.nsteps, problem.dt, len(problem.surface))
    return 0


def load_trace(exp: Experiment, path: Path) -> BoundaryTrace:
    problem = exp.problem()
    sample_dt, pts, vals = read_trace(path)
    expected = (problem.n_samples, len(problem.surface), problem.grid.dim)
    if vals.shape != expected:
        raise ConfigError(f"trace shape {vals.shape} does not match the configured setup {expected}", key="trace")
    if abs(sample_dt - problem.sample_dt) > 1e-12 * problem.sample_dt:
        raise ConfigError("trace sample interval does not match the configured solver", key="trace")
    if np.max(np.abs(pts - problem.surface.boundary_points), initial=0.0) > 1e-12:
        raise ConfigError("trace surface points do not match the configured domain", key="trace")
    return BoundaryTrace(pts, problem.sample_times(), vals, problem.surface)


def _ground_truth(exp: Experiment):
    sec = exp.section("reconstruction")
    if not sec.has("ground_truth"):
        return None
    v = sec.raw("ground_truth")
    if v == "phantom":
        return exp.phantom()
    p = Path(v)
    p = p if p.is_absolute() else exp.base / p
    return VectorField(exp.grid, read_ewf(p), support=exp.domain.omega0)


def _write_report(out: Path, report: ReconstructionReport, timing: bool):
    write_csv(out / "report.csv", ReconstructionReport.CSV_COLUMNS, report.rows(timing))
    write_ewf(out / "reconstruction.ewf", report.terminal_f.data)
    return ["report.csv", "reconstruction.ewf"]


def cmd_reconstruct(exp: Experiment, out: Path) -> int:
    sec = exp.section("reconstruction")
    trace_path = sec.path("trace", exp.base)
    if trace_path is None:
        raise ConfigError("missing required key 'trace' in [reconstruction]", key="trace")
    problem = exp.problem()
    g = load_trace(exp, trace_path)
    max_iters = sec.int("max_iters", 8)
    tol = sec.float("tol", 1e-6)
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1", key="max_iters")
    if not tol > 0:
        raise ConfigError("tol must be positive", key="tol")
    timing = sec.bool("record_timing", False)
    truth = _ground_truth(exp)
    try:
        report = reconstruct(problem, g, max_iters=max_iters, tol=tol, ground_truth=truth)
    except NoProgress as exc:
        if exc.report is not None:
            files = _write_report(out, exc.report, timing)
            _manifest(out, "reconstruct", exp, files, _summary(exc.report), status="no-progress")
        raise
    files = _write_report(out, report, timing)
    _manifest(out, "reconstruct", exp, files, _summary(report))
    return 0


def _summary(report: ReconstructionReport) -> dict:
    last = report.iterations[-1]
    return {
        "iterations": last.j,
        "final_increment": last.residual,
        "final_error": None if math.isnan(last.error) else last.error,
        "contraction_estimate": None if math.isnan(report.contraction_estimate) else report.contraction_estimate,
        "converged": report.converged,
    }


def cmd_visibility(exp: Experiment, out: Path) -> int:
    sec = exp.section("visibility")
    T = sec.float("t", exp.solver.t_final)
    dump = sec.bool("dump_rays", False)
    cert = certify_visibility(
        exp.medium,
        exp.domain.omega,
        T,
        spacing=sec.float("spacing"),
        n_directions=sec.int("n_directions", 32),
        seed=sec.int("seed", 0),
        step=sec.float("step"),
        check_reentry=sec.bool("check_reentry", False),
        keep_rays=dump,
    )
    write_csv(out / "certificate.csv", ("key", "value"), cert.summary_rows())
    files = ["certificate.csv"]
    if dump:
        d = exp.grid.dim
        head = [f"x{a}" for a in range(d)] + [f"xi{a}" for a in range(d)] + ["mode", "tau_plus", "tau_minus"]
        rows = []
        for batch in cert.rays:
            for x, xi, tp, tm in zip(batch.origins, batch.directions, batch.tau_plus, batch.tau_minus):
                rows.append((*map(float, x), *map(float, xi), batch.mode, float(tp), float(tm)))
        write_csv(out / "rays.csv", head, rows)
        files.append("rays.csv")
    _manifest(out, "visibility", exp, files, {"verdict": cert.verdict, "sharp_T_estimate": cert.sharp_T_estimate})
    log.info("visibility: %s (sharp T estimate %.6g, T = %g)", cert.verdict, cert.sharp_T_estimate, T)
    return 0


def cmd_oracle(exp: Experiment, out: Path) -> int:
    sec = exp.section("oracle")
    res = assemble_small_oracle(
        exp.problem(),
        max_unknowns=sec.int("max_unknowns", 2000),
        max_points=sec.int("max_points", 20),
        chunk=sec.int("chunk", 256),
    )
    write_ewf(out / "lambda_hat.ewf", res.Lambda)
    write_ewf(out / "a_hat.ewf", res.A)
    write_csv(
        out / "k_report.csv",
        ("key", "value"),
        [
            ("h_norm", res.h_norm),
            ("spectral_radius", res.spectral_radius),
            ("power_iterations", res.power_iterations),
            ("unknowns", res.unknowns.size),
            ("trace_entries", res.Lambda.shape[0]),
        ],
    )
    files = ["lambda_hat.ewf", "a_hat.ewf", "k_report.csv"]
    _manifest(out, "oracle", exp, files, {"h_norm": res.h_norm, "spectral_radius": res.spectral_radius})
    return 0


SWEEP_HEADER = ("index", "value", "status", "iterations", "final_error", "contraction_estimate", "h_norm", "sharp_T_estimate")


def _sweep_entry(args):
    """One sweep point, run in isolation. Returns a row of SWEEP_HEADER."""
    index, value, raw, base, mode = args
    nan = math.nan
    try:
        exp = parse_config(raw, base)
        if mode == "pipeline":
            problem = exp.problem()
            f = exp.phantom()
            trace, _, _ = forward_with_energy(problem, f, every=max(problem.nsteps, 1))
            sec = exp.section("reconstruction")
            try:
                rep = reconstruct(problem, trace, sec.int("max_iters", 8), sec.float("tol", 1e-6), ground_truth=f)
                status = "ok"
            except NoProgress as exc:
                rep, status = exc.report, "no-progress"
            last = rep.iterations[-1]
            return (index, value, status, last.j, last.error, rep.contraction_estimate, nan, nan)
        if mode == "oracle":
            res = assemble_small_oracle(exp.problem())
            return (index, value, "ok", 0, nan, nan, res.h_norm, nan)
        if mode == "visibility":
            sec = exp.section("visibility")
            cert = certify_visibility(exp.medium, exp.domain.omega, sec.float("t", exp.solver.t_final))
            return (index, value, cert.verdict, 0, nan, nan, nan, cert.sharp_T_estimate)
        raise ConfigError(f"unknown sweep command {mode!r}", key="command")
    except ConfigError as exc:
        return (index, value, f"config-error:{exc.key}", 0, nan, nan, nan, nan)
    except SolverError as exc:
        return (index, value, f"solver-error:{type(exc).__name__}", 0, nan, nan, nan, nan)


def cmd_sweep(exp: Experiment, out: Path, jobs: int = 1) -> int:
    sec = exp.section("sweep")
    param = sec.raw("parameter")
    if "." not in param:
        raise ConfigError("sweep parameter must look like section.key", key="parameter")
    section, key = param.split(".", 1)
    values = [v.strip() for v in sec.raw("values").split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value", key="values")
    mode = sec.raw("command", "pipeline")
    base = _absolute_raw(exp)
    base.pop("sweep", None)
    tasks = []
    for i, v in enumerate(values):
        raw = copy.deepcopy(base)
        raw.setdefault(section, {})[key] = v
        tasks.append((i, v, raw, exp.base, mode))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_entry, tasks))
    else:
        rows = [_sweep_entry(t) for t in tasks]
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    _manifest(out, "sweep", exp, ["sweep.csv"])
    return 0


COMMANDS = {
    "forward": cmd_forward,
    "reconstruct": cmd_reconstruct,
    "visibility": cmd_visibility,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elasticpat", description="Elastic photoacoustic time reversal toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI config or a previous manifest.json")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep entries")
        sp.add_argument("--verbose", "-v", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        exp = parse_config(raw_config(args.config), Path(args.config).parent)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "sweep":
            return cmd_sweep(exp, out, max(1, args.jobs))
        return COMMANDS[args.command](exp, out)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except ElasticPATError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
