"""``flowlab`` command line front end.

Every run writes into a fresh output directory: CSV/snapshot artifacts plus
``manifest.json`` holding the spec echo, library versions, wall time, final
status and a sha256 checksum per file.

Exit codes: 0 converged / t_end_reached / all invariants passed,
1 run failure (blow-up, solver error, failed invariant, self-intersection),
2 usage or spec errors (including an existing output directory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
import traceback
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import curveflow as cf
from . import graphflow as gf
from . import invariants
from .config import RunSpec, SpecError, load_spec, parse_spec
from .grid import ScalarField, StructuredGrid, read_snapshot, write_snapshot
from .soliton import (
    SolitonDomainError,
    boundary_interpolant,
    bowl_profile,
    grim_reaper,
    stationary_solve,
)

log = logging.getLogger("flowlab")

SUBCOMMANDS = ("graph-run", "curve-run", "bowl", "stationary", "check-invariants")
OK_STATUSES = ("converged", "t_end_reached", "passed")


class OutputExistsError(RuntimeError):
    pass


# building inputs from a spec ------------------------------------------------


def build_grid(spec: RunSpec) -> StructuredGrid:
    g = spec.grid
    return StructuredGrid(tuple(tuple(e) for e in g.extents), tuple(g.nodes), g.boundary)


def _profile_values(name, grid, ini, spec):
    X = grid.mesh()
    if name == "zero":
        return np.zeros(grid.shape)
    if name == "paraboloid":
        return ini.lam * sum(x**2 for x in X) / 2
    if name == "grim-reaper":
        return grim_reaper(X[0])
    if name == "bowl":
        r_max = float(np.sqrt(sum(max(a * a, b * b) for a, b in grid.extents))) + 0.01
        return bowl_profile(2, r_max, spec.bowl.h).lift(grid).values
    if name == "sine":
        return ini.epsilon * np.sin(X[0])
    if name == "snapshot":
        snap = read_snapshot(ini.path)
        if snap.grid != grid:
            raise SpecError("snapshot grid does not match [grid]", field="initial.path")
        return snap.values
    raise SpecError(f"unknown profile {name!r}", field="initial.profile")


def build_initial(spec: RunSpec, grid: StructuredGrid):
    """Initial field and Dirichlet data (None on periodic grids)."""
    ini = spec.initial
    u0 = _profile_values(ini.profile, grid, ini, spec) + ini.shift
    bv = None
    if not grid.periodic:
        mask = grid.boundary_mask()
        src = u0 if ini.boundary == "initial" else _profile_values(ini.boundary, grid, ini, spec)
        bv = np.asarray(src[mask], dtype=float)
        if ini.interpolate:
            u0 = boundary_interpolant(grid, bv).values
        u0 = np.array(u0, dtype=float)
        u0[mask] = bv
    if ini.noise > 0:
        rng = np.random.default_rng(spec.seed)
        noise = ini.noise * rng.uniform(-1, 1, size=grid.shape)
        if not grid.periodic:
            noise[grid.boundary_mask()] = 0
        u0 = u0 + noise
    return ScalarField(grid, u0), bv


def build_curve(spec: RunSpec) -> cf.CurveState:
    c = spec.curve
    V = tuple(c.V)
    if c.shape == "circle":
        return cf.circle(c.radius, c.points, V=V)
    if c.shape == "ellipse":
        return cf.ellipse(c.a, c.b, c.points, V=V)
    a, b = c.x_range
    if c.shape == "grim-reaper":
        return cf.grim_reaper_curve(a, b, c.points, V=V)
    x = np.linspace(a, b, c.points)
    return cf.graph_curve(x, np.zeros_like(x), V=V)


# mode runners: each returns (status, results dict) --------------------------


def _graph_run(spec, out):
    grid = build_grid(spec)
    u0, bv = build_initial(spec, grid)
    fl = spec.flow
    dt = fl.dt if fl.dt_policy == "fixed" else None
    fspec = gf.FlowRunSpec(
        u0=u0,
        t_end=fl.t_end,
        dt=dt,
        boundary_values=bv,
        tol_stationary=fl.tol_stationary,
        record_interval=fl.record_interval,
        beta=fl.beta,
        beta1=fl.beta1,
        scheme=fl.scheme,
        stepping=fl.stepping,
        keep_states=fl.snapshots,
    )
    write_snapshot(out / "u_initial.txt", u0)
    res = gf.run(fspec)
    gf.write_diagnostics_csv(out / "diagnostics.csv", res.records)
    write_snapshot(out / "u_final.txt", res.u)
    for k, (_, values) in enumerate(res.states):
        write_snapshot(out / f"snapshot_{k:04d}.txt", ScalarField(grid, values))
    last = res.records[-1]
    return res.status, {
        "steps": res.steps,
        "dt": res.dt,
        "t_final": last.t,
        "final_sup_dtu": last.sup_dtu,
        "initial_energy": res.initial_energy,
        "cumulative_dissipation": last.cumulative_dissipation,
        "max_energy_increase": res.max_energy_increase,
        "max_identity_defect": res.max_identity_defect,
    }


def _curve_run(spec, out):
    c0 = build_curve(spec)
    fl, cu = spec.flow, spec.curve
    rspec = cf.CurveRunSpec(
        state=c0,
        t_end=fl.t_end,
        dt=fl.dt if fl.dt_policy == "fixed" else None,
        cfl=cu.cfl,
        record_interval=fl.record_interval,
        beta=fl.beta,
        lam=fl.lam,
        fixed_endpoints=cu.fixed_endpoints,
        redistribute=cu.redistribute,
        keep_states=True,
    )
    if fl.dt_policy == "fixed":
        limit = cf.curve_cfl_limit(c0, cu.cfl)
        if fl.dt > limit * (1 + 1e-12):
            raise gf.CFLError(fl.dt, limit)
    res = cf.run_curve(rspec)
    cf.write_curve_records_csv(out / "diagnostics.csv", res.records)
    for k, state in enumerate(res.states):
        cf.write_curve_csv(out / f"curve_{k:04d}.csv", state)
    last = res.records[-1]
    return res.status, {
        "steps": res.steps,
        "t_final": last.t,
        "final_weighted_area": last.F,
        "max_energy_increase": res.max_energy_increase,
        "min_H": min(r.min_H for r in res.records),
    }


def _bowl(spec, out):
    b = spec.bowl
    prof = bowl_profile(b.n, b.r_max, b.h)
    prof.to_csv(out / "profile.csv")
    return "converged", {
        "n": b.n,
        "samples": int(len(prof.r)),
        "phi2_at_zero": prof.second_derivative_at_zero(),
        "phi2_expected": 1 / b.n,
        "max_radial_residual": prof.max_residual,
    }


def _stationary(spec, out):
    grid = build_grid(spec)
    u0, bv = build_initial(spec, grid)
    sol = stationary_solve(
        grid, bv, u0, scheme=spec.flow.scheme, tol=spec.solver.tol, max_iters=spec.solver.max_iters
    )
    write_snapshot(out / "solution.txt", sol.u)
    return "converged", {"iterations": sol.iterations, "residual": sol.residual}


def _check_invariants(spec, out):
    results = invariants.run_suite(seed=spec.seed)
    invariants.write_results_csv(out / "invariants.csv", results)
    failed = [r.name for r in results if not r.passed]
    return ("passed" if not failed else "failed"), {"checks": len(results), "failed": failed}


RUNNERS = {
    "graph-run": _graph_run,
    "curve-run": _curve_run,
    "bowl": _bowl,
    "stationary": _stationary,
    "check-invariants": _check_invariants,
}


# manifest -------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"flowlab": own, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_manifest(out: Path, spec: RunSpec, status, results, wall, error=None) -> Path:
    files = {
        p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "mode": spec.mode,
        "status": status,
        "spec": spec.to_dict(),
        "versions": _versions(),
        "wall_time_s": wall,
        "results": results,
        "files": files,
    }
    if error is not None:
        manifest["error"] = error
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def _error_record(exc):
    rec = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("admissible_dt", "node", "t", "residual", "iterations", "max_u", "r_last", "field", "line"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def execute(spec: RunSpec, out: Path) -> int:
    """Run one spec into ``out`` (created fresh) and return the exit code."""
    out = Path(out)
    if out.exists():
        raise OutputExistsError(f"output directory {out} already exists; refusing to overwrite")
    out.mkdir(parents=True)
    t0 = time.perf_counter()
    error = None
    results = {}
    try:
        status, results = RUNNERS[spec.mode](spec, out)
    except gf.BlowUpError as exc:
        status, error = "blow_up", _error_record(exc)
    except (
        gf.CFLError,
        gf.OverflowGuardError,
        cf.CurveError,
        SolitonDomainError,
        ArithmeticError,
        RuntimeError,
        ValueError,
    ) as exc:
        status, error = "error", _error_record(exc)
        log.debug("%s", traceback.format_exc())
    wall = time.perf_counter() - t0
    write_manifest(out, spec, status, results, wall, error)
    if error is not None:
        print(json.dumps({"status": status, "error": _jsonable(error)}), file=sys.stderr)
    log.info("%s: status %s in %.2fs -> %s", spec.mode, status, wall, out)
    return 0 if status in OK_STATUSES else 1


def build_parser():
    p = argparse.ArgumentParser(prog="flowlab", description="Translating mean curvature flow laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--spec", help="TOML run specification (defaults apply when omitted)")
        s.add_argument("--out", help="fresh output directory (overrides output_dir in the spec)")
        s.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr
    )
    try:
        if args.spec:
            spec = load_spec(args.spec)
        else:
            spec = parse_spec(f'mode = "{args.command}"\n[flow]\nt_end = 1.0\n')
        if spec.mode != args.command:
            raise SpecError(f"spec mode {spec.mode!r} does not match subcommand {args.command!r}", field="mode")
        out = args.out or spec.output_dir
        if not out:
            raise SpecError("no output directory: pass --out or set output_dir", field="output_dir")
        return execute(spec, Path(out))
    except (SpecError, OutputExistsError, OSError) as exc:
        rec = _error_record(exc)
        print(json.dumps({"status": "usage_error", "error": _jsonable(rec)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
