"""Desk-scale invariant suite behind ``flowlab check-invariants``.

Each check is a small self-contained computation returning one pass/fail
row. Grids are coarser than the acceptance suite so the whole set finishes
in about a minute on one core.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import curveflow as cf
from .graphflow import FlowRunSpec, graph_geometry, run, tmcf_rhs
from .grid import ScalarField, StructuredGrid
from .soliton import barrier_offsets, boundary_interpolant, bowl_profile, grim_reaper, stationary_solve


@dataclass
class InvariantResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.threshold = float(self.threshold)


def _reaper_run(nodes=51, keep_states=False, bump=0.0):
    g = StructuredGrid.box(-1, 1, nodes, 1)
    bv = [grim_reaper(1.0)] * 2
    u0 = boundary_interpolant(g, bv).values
    u0 = u0 + bump * np.cos(np.pi * g.axes()[0] / 2)
    return run(
        FlowRunSpec(ScalarField(g, u0), t_end=3.0, tol_stationary=1e-12, record_interval=0.1, keep_states=keep_states)
    )


def check_reaper_stationarity(seed=0):
    errs = []
    for n in (261, 521):
        g = StructuredGrid.box(-1.3, 1.3, n, 1)
        r = tmcf_rhs(ScalarField(g, grim_reaper(g.axes()[0])))
        errs.append(float(np.max(np.abs(r.values))))
    ratio = errs[0] / errs[1]
    return InvariantResult("reaper_stationarity_order", abs(ratio - 4) <= 0.8, ratio, 4.0, f"sup|rhs|={errs[1]:.3e}")


def check_energy_monotone(seed=0):
    res = _reaper_run()
    return InvariantResult("energy_monotone", res.max_energy_increase <= 1e-8, res.max_energy_increase, 1e-8)


def check_dissipation_identity(seed=0):
    res = _reaper_run()
    return InvariantResult("dissipation_identity", res.max_identity_defect <= 0.05, res.max_identity_defect, 0.05)


def check_dissipation_bound(seed=0):
    res = _reaper_run()
    ratio = res.records[-1].cumulative_dissipation / res.initial_energy
    return InvariantResult("cumulative_dissipation_bound", ratio <= 1.01, ratio, 1.01)


def check_comparison(seed=0):
    lo = _reaper_run(keep_states=True)
    hi = _reaper_run(keep_states=True, bump=0.3)
    worst = min(float(np.min(b - a)) for (_, a), (_, b) in zip(lo.states, hi.states))
    return InvariantResult("comparison_principle", worst >= 0, worst, 0.0)


def check_barrier(seed=0):
    g = StructuredGrid.box(-1, 1, 21, 2)
    w = bowl_profile(2, 1.5, 1e-3).lift(g)
    u0 = ScalarField(g, np.zeros(g.shape))
    C = barrier_offsets(u0, w)
    res = run(FlowRunSpec(u0, t_end=5.0, record_interval=0.1, keep_states=True))
    margin = min(min(float(np.min(u - (w.values - C))), float(np.min(w.values + C - u))) for _, u in res.states)
    return InvariantResult("barrier_trapping", margin >= 0, margin, 0.0, f"C={C:.6f}")


def check_paraboloid_sign(seed=0):
    g = StructuredGrid.box(-2, 2, 81, 2)
    X, Y = g.mesh()
    r2 = X**2 + Y**2
    out = []
    for lam in (1.0, 0.1):
        geo = graph_geometry(ScalarField(g, lam * r2 / 2))
        out.append((geo.H.values - geo.Vnu.values)[g.interior_mask()])
    ok = out[0].max() < 0 and out[1].min() > 0
    return InvariantResult("paraboloid_sign", bool(ok), float(out[0].max()), 0.0, f"lambda=0.1 min {out[1].min():.3e}")


def check_periodic_pinching(seed=0):
    g = StructuredGrid(((0.0, 2 * np.pi),), (129,), "periodic")
    u0 = ScalarField(g, 0.1 * np.sin(g.axes()[0]))
    res = run(FlowRunSpec(u0, t_end=1.0, record_interval=0.1, beta=-0.2, beta1=0.2, tol_stationary=1e-12))
    worst = min(min(r.min_H_minus_betaVnu, r.min_H_minus_beta1Vnu) for r in res.records)
    tol = g.h_min**2
    return InvariantResult("periodic_pinching", worst >= -tol, worst, -tol)


def check_bowl_curvature(seed=0):
    err = max(abs(bowl_profile(n, 1.0, 1e-3).second_derivative_at_zero() - 1 / n) for n in (2, 3))
    return InvariantResult("bowl_phi2_at_zero", err <= 1e-6, err, 1e-6)


def check_newton_reaper(seed=0):
    g = StructuredGrid.box(-1, 1, 41, 1)
    sol = stationary_solve(g, [grim_reaper(1.0)] * 2)
    err = float(np.max(np.abs(sol.u.values - grim_reaper(g.axes()[0]))))
    return InvariantResult("newton_residual", sol.residual < 1e-10, sol.residual, 1e-10, f"reaper error {err:.2e}")


def check_shrinking_circle(seed=0):
    res = cf.run_curve(cf.CurveRunSpec(cf.circle(1.0, 128, V=(0.0, 0.0)), t_end=0.4, record_interval=0.1))
    R = float(np.mean(np.linalg.norm(res.state.points, axis=1)))
    err = abs(R - np.sqrt(1 - 0.8))
    return InvariantResult("shrinking_circle", err <= 1e-3, err, 1e-3)


def _ellipse_residual(n, t=0.01):
    c = cf.ellipse(2.0, 1.0, n)
    steps = int(np.ceil(t / (0.5 * cf.curve_cfl_limit(c))))
    dt = t / steps
    states = [c]
    for _ in range(steps + 1):
        states.append(cf.curve_step(states[-1], dt))
    return cf.evolution_residuals(states[-3:])


def check_evolution_order(seed=0):
    a, b = _ellipse_residual(64), _ellipse_residual(128)
    p = float(np.log2(a.sup_H() / b.sup_H()))
    return InvariantResult("evolution_residual_order", 1.6 <= p <= 2.4, p, 2.0)


def check_variations(seed=0):
    rng = np.random.default_rng(seed)
    c = cf.grim_reaper_curve(-1, 1, 257)
    x = c.points[:, 0]
    coef = rng.normal(size=3)
    f = sum(a * np.sin((k + 1) * np.pi * (x + 1) / 2) for k, a in enumerate(coef))
    first = cf.first_variation_check(c, f, 1e-3).analytic
    J = cf.jacobi_form(c, f)
    nu = cf.curve_geometry(c).nu
    eps = 1e-3

    def F(s):
        return cf.weighted_area(c.with_points(c.points + s * f[:, None] * nu))

    fd2 = (F(eps) - 2 * F(0) + F(-eps)) / eps**2
    rel = abs(J - fd2) / abs(fd2)
    ok = abs(first) <= 1e-4 and rel <= 0.05
    return InvariantResult("variation_formulas", bool(ok), rel, 0.05, f"first variation {first:.2e}")


CHECKS = (
    check_reaper_stationarity,
    check_energy_monotone,
    check_dissipation_identity,
    check_dissipation_bound,
    check_comparison,
    check_barrier,
    check_paraboloid_sign,
    check_periodic_pinching,
    check_bowl_curvature,
    check_newton_reaper,
    check_shrinking_circle,
    check_evolution_order,
    check_variations,
)


def _call(args):
    fn, seed = args
    return fn(seed)


def run_suite(seed: int = 0, threads: int | None = None) -> list[InvariantResult]:
    """Run every check, fanning out to at most ``threads`` worker processes
    (default: ``FLOWLAB_THREADS`` or 1). Results keep the declared order."""
    if threads is None:
        threads = int(os.environ.get("FLOWLAB_THREADS", "1"))
    jobs = [(fn, seed) for fn in CHECKS]
    if threads <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, jobs))


def write_results_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["invariant", "passed", "value", "threshold", "detail"])
        for r in results:
            w.writerow([r.name, "pass" if r.passed else "fail", format(r.value, ".17g"), format(r.threshold, ".17g"), r.detail])
