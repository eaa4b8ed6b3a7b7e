import numpy as np
import pytest

from flowlab.curveflow import (
    CURVE_COLUMNS,
    CurveError,
    CurveRunSpec,
    CurveState,
    circle,
    curve_cfl_limit,
    curve_geometry,
    curve_step,
    ellipse,
    evolution_residuals,
    first_variation_check,
    graph_curve,
    grim_reaper_curve,
    is_simple,
    jacobi_form,
    read_curve_csv,
    redistribute,
    run_curve,
    segment_lengths,
    curve_pinching_monitors,
    weighted_area,
    write_curve_csv,
    write_curve_records_csv,
)
from flowlab.graphflow import CFLError

# 2 pi I_0(1): integral of e^{sin t} over a period, from the Bessel series
UNIT_CIRCLE_WEIGHTED_LENGTH = 7.954926521012845


def test_state_validation():
    with pytest.raises(CurveError):
        CurveState(np.zeros((5, 2)), False)
    pts = circle(1.0, 16).points.copy()
    pts[3] = pts[2]
    with pytest.raises(CurveError, match="degenerate"):
        CurveState(pts, True)
    with pytest.raises(CurveError):
        CurveState(np.full((10, 2), np.inf), False)


def test_circle_geometry():
    c = circle(2.0, 256, V=(0.0, -1.0))
    g = curve_geometry(c)
    th = 2 * np.pi * np.arange(256) / 256
    np.testing.assert_allclose(g.H, 0.5, atol=1e-10)
    np.testing.assert_allclose(g.a11, -0.5, atol=1e-10)
    np.testing.assert_allclose(g.Vnu, -np.sin(th), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(g.T, axis=1), 1)
    np.testing.assert_allclose(np.linalg.norm(g.nu, axis=1), 1)
    np.testing.assert_allclose(np.sum(g.T * g.nu, axis=1), 0, atol=1e-15)
    np.testing.assert_allclose(g.A2, g.a11**2)


def test_clockwise_circle_keeps_outward_normal():
    c = circle(1.0, 64)
    cw = CurveState(c.points[::-1].copy(), True)
    g = curve_geometry(cw)
    np.testing.assert_allclose(np.sum(g.nu * cw.points, axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(g.H, 1, atol=1e-3)


def test_grim_reaper_speed_vanishes():
    sups = []
    for n in (65, 129):
        g = curve_geometry(grim_reaper_curve(-1, 1, n))
        sups.append(np.max(np.abs(g.f[1:-1])))
    assert sups[1] < 5e-4
    assert sups[0] / sups[1] == pytest.approx(4, rel=0.2)


def test_straight_segment():
    x = np.linspace(0, 1, 12)
    c = graph_curve(x, 0.5 * x, V=(0.3, -1.0))
    g = curve_geometry(c)
    np.testing.assert_allclose(g.H, 0, atol=1e-12)
    np.testing.assert_allclose(g.f, g.f[0], atol=1e-12)


def test_step_shrinks_circle():
    R, dt = 1.5, 1e-4
    c = circle(R, 256, V=(0.0, 0.0))
    new = curve_step(c, dt)
    r = np.linalg.norm(new.points, axis=1)
    np.testing.assert_allclose(r, R - dt / R, atol=1e-6 * dt + 1e-12)
    assert new.t == dt


def test_step_keeps_grim_reaper():
    c = grim_reaper_curve(-1, 1, 129)
    dt = curve_cfl_limit(c)
    new = curve_step(c, dt)
    assert np.max(np.abs(new.points - c.points)) < dt * 1e-3
    assert np.array_equal(new.points[[0, -1]], c.points[[0, -1]])


def test_free_straight_line_translates_rigidly():
    x = np.linspace(-1, 1, 20)
    c = graph_curve(x, 0.2 * x, V=(0.0, -1.0))
    dt = 0.5 * curve_cfl_limit(c)
    new = curve_step(c, dt, fixed_endpoints=False)
    nu = np.array([-0.2, 1.0]) / np.sqrt(1.04)
    shift = dt * (nu @ np.array([0.0, -1.0])) * nu
    np.testing.assert_allclose(new.points - c.points, np.broadcast_to(shift, c.points.shape), atol=1e-15)


def test_step_rejects_large_dt():
    c = circle(1.0, 64)
    with pytest.raises(CFLError) as err:
        curve_step(c, 1.0)
    assert err.value.admissible_dt == pytest.approx(0.25 * segment_lengths(c.points, True).min() ** 2)


def test_redistribute_equalises_segments():
    th = np.linspace(0, 2 * np.pi, 101)[:-1]
    th = th + 0.2 * np.sin(th)
    c = CurveState(np.stack([np.cos(th), np.sin(th)], axis=1), True)
    r = redistribute(c)
    seg = segment_lengths(r.points, True)
    assert seg.std() / seg.mean() < 1e-4
    np.testing.assert_allclose(np.linalg.norm(r.points, axis=1), 1, atol=1e-5)
    x = np.linspace(-1, 1, 30) ** 3
    o = redistribute(graph_curve(x, x**2))
    assert np.array_equal(o.points[[0, -1]], np.array([[-1, 1], [1, 1]]))


def test_is_simple():
    assert is_simple(ellipse(2, 1, 64).points, True)
    t = np.linspace(0, 2 * np.pi, 80, endpoint=False)
    eight = np.stack([np.sin(t), np.sin(t) * np.cos(t)], axis=1)
    assert not is_simple(eight, True)


def test_residuals_need_three_states():
    c = circle(1.0, 32)
    with pytest.raises(CurveError):
        evolution_residuals([c, c])


def test_static_reaper_residuals_second_order():
    sups = []
    for n in (65, 129):
        c = grim_reaper_curve(-1, 1, n)
        states = [c.with_points(c.points, t) for t in (0.0, 1e-3, 2e-3)]
        res = evolution_residuals(states)
        sups.append(max(res.sup_vnu(), res.sup_H()))
    assert sups[0] / sups[1] == pytest.approx(4, rel=0.2)


def test_shrinking_circle_residuals():
    R0, n = 1.0, 128
    c = circle(R0, n, V=(0.0, 0.0))
    dt = 0.5 * curve_cfl_limit(c)
    states = [c]
    for _ in range(2):
        states.append(curve_step(states[-1], dt))
    res = evolution_residuals(states)
    assert res.sup_vnu() == 0
    # dH/dt = H^3 on the exact solution H = 1/sqrt(R0^2 - 2t)
    g = curve_geometry(states[1])
    dHdt = (curve_geometry(states[2]).H - curve_geometry(states[0]).H) / (2 * dt)
    np.testing.assert_allclose(dHdt, g.H**3, rtol=1e-3)
    assert res.sup_H() < 1e-3


def _ellipse_sup(n, t=0.01):
    c = ellipse(2.0, 1.0, n)
    steps = int(np.ceil(t / (0.5 * curve_cfl_limit(c))))
    states = [c]
    for _ in range(steps + 1):
        states.append(curve_step(states[-1], t / steps))
    r = evolution_residuals(states[-3:])
    return r.sup_vnu(), r.sup_H()


def test_ellipse_residual_refinement():
    a, b = _ellipse_sup(128), _ellipse_sup(256)
    for p in np.log2(np.array(a) / np.array(b)):
        assert 1.6 <= p <= 2.4


def test_monitors():
    m = curve_pinching_monitors(circle(2.0, 128, V=(0.0, -1.0)), beta=1.0)
    assert m.min_Vnu == pytest.approx(-1)
    assert m.min_H == pytest.approx(0.5, abs=1e-4)
    assert np.isnan(m.sup_B2)  # beta Vnu - H < 0 somewhere
    r = curve_pinching_monitors(grim_reaper_curve(-1, 1, 257), beta=1.0)
    assert abs(r.min_beta_Vnu_minus_H) < 0.02  # one-sided end stencils dominate
    g = curve_geometry(grim_reaper_curve(-1, 1, 257))
    assert np.max(np.abs((g.Vnu - g.H)[1:-1])) < 1e-4
    up = curve_pinching_monitors(grim_reaper_curve(-1, 1, 65, V=(0.0, 1.0)), beta=1.0)
    assert up.min_Vnu > 0


def test_b_quantity_where_defined():
    c = circle(1.0, 64, V=(0.0, 0.0))
    m = curve_pinching_monitors(c, beta=1.0, lam=0.5)
    # beta Vnu - H = -1 < 0 everywhere: undefined
    assert np.isnan(m.sup_B2)
    m = curve_pinching_monitors(CurveState(c.points, True, 0.0, (0.0, 0.0)), beta=-1.0)
    assert np.isnan(m.sup_B2)
    x = np.linspace(-1, 1, 33)
    flat = graph_curve(x, np.zeros_like(x), V=(0.0, 1.0))
    m = curve_pinching_monitors(flat, beta=1.0, lam=2.0)
    assert m.sup_B2 == pytest.approx(4.0)


def test_weighted_area_values():
    errs = []
    for n in (64, 128):
        errs.append(abs(weighted_area(circle(1.0, n, V=(0.0, 0.0))) - 2 * np.pi))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    seg = graph_curve(np.linspace(0, 1, 9), np.zeros(9), V=(0.0, -1.0))
    assert weighted_area(seg) == pytest.approx(1.0)
    assert weighted_area(circle(1.0, 512, V=(0.0, -1.0))) == pytest.approx(UNIT_CIRCLE_WEIGHTED_LENGTH, rel=1e-4)


def test_weighted_area_overflow_guard():
    from flowlab.graphflow import OverflowGuardError

    with pytest.raises(OverflowGuardError):
        weighted_area(circle(1.0, 16, center=(0.0, 900.0), V=(0.0, -1.0)))


def test_first_variation_circle_and_reaper():
    c = circle(1.0, 512, V=(0.0, 0.0))
    chk = first_variation_check(c, np.ones(512), 1e-3)
    assert chk.analytic == pytest.approx(2 * np.pi, rel=1e-4)
    assert chk.finite_difference == pytest.approx(chk.analytic, rel=1e-4)
    gr = grim_reaper_curve(-1, 1, 257)
    x = gr.points[:, 0]
    assert abs(first_variation_check(gr, np.sin(np.pi * (x + 1) / 2), 1e-3).analytic) < 1e-4


def test_first_variation_richardson_order():
    e = ellipse(2.0, 1.0, 512)
    th = 2 * np.pi * np.arange(512) / 512
    rng = np.random.default_rng(7)
    a = rng.normal(size=3)
    f = a[0] + a[1] * np.cos(2 * th) + a[2] * np.sin(th)
    fd = [first_variation_check(e, f, eps).finite_difference for eps in (0.02, 0.01, 0.005)]
    assert (fd[0] - fd[1]) / (fd[1] - fd[2]) == pytest.approx(4, rel=0.05)


def test_first_variation_guards():
    gr = grim_reaper_curve(-1, 1, 33)
    with pytest.raises(CurveError):
        first_variation_check(gr, np.ones(33), 1e-3)
    c = circle(1.0, 64)
    assert first_variation_check(c, np.ones(64), 1e-17).status == "cancellation"


def test_jacobi_form():
    gr = grim_reaper_curve(-1, 1, 257)
    x = gr.points[:, 0]
    assert jacobi_form(gr, np.zeros(257)) == 0
    f = np.sin(np.pi * (x + 1) / 2)
    assert jacobi_form(gr, 2 * f) == pytest.approx(4 * jacobi_form(gr, f), rel=1e-14)
    with pytest.raises(CurveError, match="critical"):
        jacobi_form(ellipse(2, 1, 64), np.ones(64))


def test_run_shrinking_circle_and_csv(tmp_path):
    res = run_curve(CurveRunSpec(circle(1.0, 128, V=(0.0, 0.0)), t_end=0.2, record_interval=0.1, keep_states=True))
    assert res.status == "t_end_reached"
    assert [r.t for r in res.records] == pytest.approx([0.0, 0.1, 0.2])
    R = np.linalg.norm(res.state.points, axis=1).mean()
    assert abs(R - np.sqrt(1 - 0.4)) < 1e-3
    assert res.max_energy_increase <= 1e-8
    write_curve_csv(tmp_path / "c.csv", res.state)
    back = read_curve_csv(tmp_path / "c.csv", True, V=(0.0, 0.0))
    assert np.array_equal(back.points, res.state.points)
    write_curve_records_csv(tmp_path / "m.csv", res.records)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(CURVE_COLUMNS)


def test_ellipse_keeps_positive_curvature():
    res = run_curve(CurveRunSpec(ellipse(2.0, 1.0, 128), t_end=0.3, record_interval=0.05, redistribute=True))
    assert all(r.min_H > 0 for r in res.records)


def test_convex_graph_keeps_nonnegative_a11():
    x = np.linspace(-1, 1, 65)
    c = graph_curve(x, x**2 / 2, V=(0.0, -1.0))
    res = run_curve(CurveRunSpec(c, t_end=0.5, record_interval=0.05))
    h = segment_lengths(c.points, False).max()
    assert all(r.min_a11 >= -(h**2) for r in res.records)
    assert res.max_energy_increase <= 1e-8


def test_weighted_area_decreases_with_fixed_ends():
    x = np.linspace(-1, 1, 65)
    c = graph_curve(x, 0.3 * np.sin(3 * x) + 0.2, V=(0.0, -1.0))
    res = run_curve(CurveRunSpec(c, t_end=0.2, record_interval=0.05))
    assert res.max_energy_increase <= 1e-8
    F = [r.F for r in res.records]
    assert F[-1] < F[0]
