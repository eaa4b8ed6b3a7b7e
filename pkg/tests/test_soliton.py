import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowlab import soliton
from flowlab.graphflow import FlowRunSpec, run, tmcf_rhs
from flowlab.grid import GridError, ScalarField, StructuredGrid
from flowlab.soliton import (
    BowlIntegrationError,
    NewtonError,
    SolitonDomainError,
    SolitonProfile,
    barrier_offsets,
    boundary_interpolant,
    bowl_profile,
    bowl_series_coefficients,
    grim_reaper,
    grim_reaper_slope,
    stationary_solve,
)

REAPER_EDGE = 0.6156264703860141  # -log cos 1


def test_grim_reaper_values():
    assert grim_reaper(0.0) == 0
    assert grim_reaper(np.pi / 3) == pytest.approx(np.log(2), abs=1e-15)
    assert grim_reaper(1.0) == pytest.approx(REAPER_EDGE, abs=1e-15)
    assert grim_reaper_slope(np.pi / 4) == pytest.approx(1.0)


@pytest.mark.parametrize("x", [np.pi / 2, -np.pi / 2, 2.0, [0.1, 1.6]])
def test_grim_reaper_domain(x):
    with pytest.raises(SolitonDomainError):
        grim_reaper(x)
    with pytest.raises(SolitonDomainError):
        grim_reaper_slope(x)


@given(st.floats(-1.4, 1.4))
def test_grim_reaper_solves_soliton_ode(x):
    # u'' = 1 + u'^2, second derivative by a central difference
    h = 1e-4
    upp = (grim_reaper(x + h) - 2 * grim_reaper(x) + grim_reaper(x - h)) / h**2
    assert upp == pytest.approx(1 + grim_reaper_slope(x) ** 2, rel=1e-5)


def test_series_coefficients_reduce_to_log_cos():
    # n = 1 is the grim reaper: -log cos x = x^2/2 + x^4/12 + x^6/45 + 17 x^8/2520 + ...
    assert bowl_series_coefficients(1) == pytest.approx((1 / 2, 1 / 12, 1 / 45, 17 / 2520), rel=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_bowl_profile_properties(n):
    p = bowl_profile(n, 4.0, 1e-3)
    assert p.phi[0] == 0 and p.dphi[0] == 0
    assert p.second_derivative_at_zero() == pytest.approx(1 / n, abs=1e-6)
    assert np.all(np.diff(p.dphi) >= 0)
    assert p.max_residual <= 1e-8


@pytest.mark.parametrize("n", [2, 3])
def test_bowl_residual_is_fourth_order(n):
    coarse = bowl_profile(n, 4.0, 0.05).max_residual
    fine = bowl_profile(n, 4.0, 0.025).max_residual
    assert coarse / fine >= 8


def test_bowl_rejects_bad_input():
    with pytest.raises(ValueError):
        bowl_profile(1, 1.0, 0.01)
    with pytest.raises(ValueError):
        bowl_profile(2, -1.0, 0.01)


def test_bowl_integration_error_reports_radius(monkeypatch):
    monkeypatch.setattr(soliton, "_radial_rhs", lambda n, r, y: np.array([np.nan, np.nan]))
    with pytest.raises(BowlIntegrationError) as err:
        bowl_profile(2, 1.0, 0.01)
    assert err.value.r_last == pytest.approx(0.1)


def test_bowl_csv_round_trip(tmp_path):
    p = bowl_profile(2, 1.0, 0.01)
    p.to_csv(tmp_path / "bowl.csv")
    assert (tmp_path / "bowl.csv").read_text().splitlines()[0] == "r,phi,dphi"
    q = SolitonProfile.from_csv(tmp_path / "bowl.csv", 2)
    assert np.array_equal(q.r, p.r) and np.array_equal(q.phi, p.phi) and np.array_equal(q.dphi, p.dphi)


def test_lifted_bowl_is_stationary_to_second_order():
    p = bowl_profile(2, 1.5, 1e-3)
    sups = []
    for n in (41, 81):
        g = StructuredGrid.box(-1, 1, n, 2)
        sups.append(np.max(np.abs(tmcf_rhs(p.lift(g)).values)))
    assert sups[0] / sups[1] == pytest.approx(4, rel=0.2)
    with pytest.raises(SolitonDomainError):
        bowl_profile(2, 1.0, 1e-2).lift(StructuredGrid.box(-1, 1, 5, 2))


def test_stationary_reaper_1d():
    errs = []
    for n in (21, 41):
        g = StructuredGrid.box(-1, 1, n, 1)
        sol = stationary_solve(g, [REAPER_EDGE, REAPER_EDGE])
        assert sol.residual < 1e-10
        errs.append(np.max(np.abs(sol.u.values - grim_reaper(g.axes()[0]))))
        assert errs[-1] <= g.h_min**2
    assert errs[1] < errs[0]


def test_stationary_lifted_bowl_2d():
    p = bowl_profile(2, 1.5, 1e-3)
    errs = []
    for n in (21, 41):
        g = StructuredGrid.box(-1, 1, n, 2)
        w = p.lift(g)
        sol = stationary_solve(g, w.values[g.boundary_mask()])
        res = np.max(np.abs(tmcf_rhs(sol.u, scheme="variational").values))
        assert sol.residual < 1e-10 and res < 1e-10
        errs.append(np.max(np.abs(sol.u.values - w.values)))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.2)


def test_stationary_translation_invariance():
    g = StructuredGrid.box(-1, 1, 15, 2)
    bv = np.zeros(int(g.boundary_mask().sum()))
    a = stationary_solve(g, bv)
    b = stationary_solve(g, bv + 2.5)
    assert np.max(np.abs(b.u.values - a.u.values - 2.5)) < 1e-9


def test_stationary_independent_of_initializer():
    g = StructuredGrid.box(-1, 1, 21, 2)
    bv = np.zeros(int(g.boundary_mask().sum()))
    flowed = run(FlowRunSpec(ScalarField(g, np.zeros(g.shape)), t_end=20.0)).u
    a = stationary_solve(g, bv)
    b = stationary_solve(g, bv, flowed)
    assert np.max(np.abs(a.u.values - b.u.values)) < 1e-9


def test_stationary_errors():
    g = StructuredGrid.box(-1, 1, 11, 1)
    with pytest.raises(NewtonError) as err:
        stationary_solve(g, [0.0, 0.0], max_iters=0)
    assert err.value.residual == pytest.approx(1.0)
    with pytest.raises(GridError):
        stationary_solve(g, [0.0, 0.0], ScalarField(g, np.ones(11)))
    with pytest.raises(GridError):
        stationary_solve(StructuredGrid(((0, 1),), (9,), "periodic"), [])


def test_boundary_interpolant_matches_edges():
    g = StructuredGrid.box(-1, 1, 9, 2)
    X, Y = g.mesh()
    f = X + 2 * Y + X * Y  # bilinear: reproduced exactly
    u = boundary_interpolant(g, f[g.boundary_mask()])
    np.testing.assert_allclose(u.values, f, atol=1e-14)


def test_barrier_offsets():
    g = StructuredGrid.box(-1, 1, 21, 2)
    w = bowl_profile(2, 1.5, 1e-3).lift(g)
    assert barrier_offsets(w, w) == 0
    assert barrier_offsets(ScalarField(g, w.values + 3), w) == pytest.approx(3)
    zero = ScalarField(g, np.zeros(g.shape))
    scan = max(max(abs(0 - x) for x in row) for row in w.values)
    assert barrier_offsets(zero, w) == scan
    assert barrier_offsets(zero, w) == max(w.values.max(), -w.values.min())
