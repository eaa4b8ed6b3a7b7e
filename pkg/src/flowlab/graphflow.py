"""Graphical translating mean curvature flow on a structured grid.

The height ``u`` evolves by ``u_t = v div(Du/v) - 1`` with ``v = sqrt(1+|Du|^2)``,
i.e. the graph translates downward (V = -e_{n+1}) while its mean curvature
relaxes. The flow is the negative gradient flow of the weighted area
``F(u) = int v e^u dx``.

Two spatial schemes are available:

``"flux"``
    ``v * div_flux(u) - 1`` with midpoint fluxes (see :mod:`flowlab.grid`).
``"variational"``
    the exact discrete gradient flow of a P1 weighted area: every simplex
    carries ``|T| * sqrt(1+|Du_T|^2) * mean_T(e^u)`` with the mean of ``e^u``
    taken by a rule exact for quadratics. Then ``F(t+dt) - F(t) = -dt D + O(dt^2)``
    holds to rounding, which the dissipation diagnostics depend on.

The variational scheme is the default for time stepping and for the
stationary Newton solver.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    GridError,
    ScalarField,
    StructuredGrid,
    div_flux_array,
    gradient_array,
    hessian_array,
    integrate,
)

log = logging.getLogger(__name__)

SCHEMES = ("variational", "flux")
STEPPINGS = ("explicit", "semi-implicit")
DIAGNOSTIC_COLUMNS = (
    "t",
    "F",
    "D",
    "sup_dtu",
    "sup_Du",
    "min_H_minus_betaVnu",
    "min_pinch_eig",
    "cumulative_dissipation",
)

# e^u is averaged over a simplex with a rule exact for quadratics:
# Simpson on segments, edge midpoints on triangles (barycentric over c, a, b).
_SEGMENT_RULE = (((1.0, 0.0), 1 / 6), ((0.5, 0.5), 4 / 6), ((0.0, 1.0), 1 / 6))
_TRIANGLE_RULE = (
    ((0.5, 0.5, 0.0), 1 / 3),
    ((0.0, 0.5, 0.5), 1 / 3),
    ((0.5, 0.0, 0.5), 1 / 3),
)


class CFLError(ValueError):
    def __init__(self, dt, limit):
        super().__init__(f"dt={dt:g} exceeds the explicit stability limit; admissible dt <= {limit:g}")
        self.dt = dt
        self.admissible_dt = limit


class BlowUpError(RuntimeError):
    def __init__(self, node, t, records=None):
        super().__init__(f"non-finite height at node {node} (t={t:g})")
        self.node = node
        self.t = t
        self.records = records or []


class OverflowGuardError(ValueError):
    def __init__(self, max_u):
        super().__init__(f"e^u overflows: max u = {max_u:g}")
        self.max_u = max_u


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _exp_weight(u):
    if np.isrealobj(u):
        top = float(np.max(u))
        if top > 700:
            raise OverflowGuardError(top)
    return np.exp(u)


def area_element_array(u, grid):
    Du = gradient_array(u, grid)
    return np.sqrt(1 + np.sum(Du * Du, axis=0))


# geometry -------------------------------------------------------------------


@dataclass
class GraphGeometry:
    v: ScalarField
    H: ScalarField
    Vnu: ScalarField
    hess: np.ndarray  # (n, n, *shape)
    sff_eigs: np.ndarray  # (n, *shape), ascending
    sff_min_eig: ScalarField


def graph_geometry(u: ScalarField) -> GraphGeometry:
    """Area element, mean curvature, <V,nu> and second fundamental form.

    ``H = -(1/v) g^{ij} u_ij`` (so convex graphs have ``H <= 0``), the normal is
    the upward ``(-Du, 1)/v`` and the eigenvalues of ``A`` are taken relative to
    the induced metric ``g = I + Du Du^T``.
    """
    grid = u.grid
    Du = gradient_array(u.values, grid)
    hess = hessian_array(u.values, grid)
    v = np.sqrt(1 + np.sum(Du * Du, axis=0))
    n = grid.dim
    trace = np.zeros_like(v)
    for i in range(n):
        for j in range(n):
            ginv = (1.0 if i == j else 0.0) - Du[i] * Du[j] / v**2
            trace = trace + ginv * hess[i, j]
    H = -trace / v
    S = hess / v
    if n == 1:
        eigs = (S[0, 0] / v**2)[None]
    else:
        g11 = 1 + Du[0] ** 2
        g22 = 1 + Du[1] ** 2
        g12 = Du[0] * Du[1]
        a = g11 * g22 - g12**2
        b = -(S[0, 0] * g22 + S[1, 1] * g11 - 2 * S[0, 1] * g12)
        c = S[0, 0] * S[1, 1] - S[0, 1] ** 2
        root = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
        eigs = np.stack([(-b - root) / (2 * a), (-b + root) / (2 * a)])
    return GraphGeometry(
        v=ScalarField(grid, v),
        H=ScalarField(grid, H),
        Vnu=ScalarField(grid, -1 / v),
        hess=hess,
        sff_eigs=eigs,
        sff_min_eig=ScalarField(grid, eigs[0]),
    )


def pinch_monitors(u: ScalarField, beta: float) -> tuple[float, float]:
    """``(min(beta<V,nu> - H), min eig(A + beta<V,nu> g / n))`` over all nodes."""
    geo = graph_geometry(u)
    n = u.grid.dim
    gap = beta * geo.Vnu.values - geo.H.values
    pinch = geo.sff_min_eig.values + beta * geo.Vnu.values / n
    return float(gap.min()), float(pinch.min())


# discrete weighted area -------------------------------------------------------


def _ends(s):
    return (slice(0, -1), slice(1, None)) if s == 1 else (slice(1, None), slice(0, -1))


@dataclass(frozen=True)
class _Family:
    """One family of congruent simplices.

    ``take(arr)`` returns the vertex values of every simplex (one array per
    vertex), ``scatter(parts)`` sums per-vertex contributions back onto nodes,
    and ``coeffs[k]`` holds the weights turning vertex values into gradient
    component ``k``.
    """

    weight: float
    take: object
    scatter: object
    coeffs: tuple


@lru_cache(maxsize=32)
def _families(grid):
    if grid.dim == 1:
        (h,) = grid.spacing
        if grid.periodic:
            take = lambda a: (a, np.roll(a, -1))
            scatter = lambda parts: parts[0] + np.roll(parts[1], 1)
        else:

            def take(a):
                return a[:-1], a[1:]

            def scatter(parts, shape=grid.shape):
                out = np.zeros(shape, dtype=parts[0].dtype)
                out[:-1] += parts[0]
                out[1:] += parts[1]
                return out

        return [_Family(h, take, scatter, ((-1 / h, 1 / h),))]

    hx, hy = grid.spacing
    fams = []
    # right triangles with the right angle at c and legs to a (x) and b (y),
    # four orientations so that every cell is covered twice
    for sx in (1, -1):
        for sy in (1, -1):
            if grid.periodic:

                def take(a, sx=sx, sy=sy):
                    return a, np.roll(a, -sx, 0), np.roll(a, -sy, 1)

                def scatter(parts, sx=sx, sy=sy):
                    return parts[0] + np.roll(parts[1], sx, 0) + np.roll(parts[2], sy, 1)

            else:
                cx, ax = _ends(sx)
                cy, by = _ends(sy)

                def take(a, cx=cx, ax=ax, cy=cy, by=by):
                    return a[cx, cy], a[ax, cy], a[cx, by]

                def scatter(parts, cx=cx, ax=ax, cy=cy, by=by, shape=grid.shape):
                    out = np.zeros(shape, dtype=parts[0].dtype)
                    out[cx, cy] += parts[0]
                    out[ax, cy] += parts[1]
                    out[cx, by] += parts[2]
                    return out

            coeffs = ((-sx / hx, sx / hx, 0.0), (-sy / hy, 0.0, sy / hy))
            fams.append(_Family(hx * hy / 4, take, scatter, coeffs))
    return fams


def _rule(grid):
    return _SEGMENT_RULE if grid.dim == 1 else _TRIANGLE_RULE


def _simplex_state(fam, rule, u):
    verts = fam.take(u)
    grads = [sum(c * x for c, x in zip(cs, verts) if c) for cs in fam.coeffs]
    m = 0.0
    dm = [0.0] * len(verts)
    for lam, w in rule:
        e = w * np.exp(sum(l * x for l, x in zip(lam, verts) if l))
        m = m + e
        for k, l in enumerate(lam):
            if l:
                dm[k] = dm[k] + l * e
    psi = np.sqrt(1 + sum(g * g for g in grads))
    return verts, grads, m, dm, psi


def energy_gradient_array(u, grid):
    """Discrete weighted area and its gradient with respect to nodal heights."""
    if np.isrealobj(u) and np.max(u) > 700:
        raise OverflowGuardError(float(np.max(u)))
    rule = _rule(grid)
    E = 0.0
    G = 0.0
    for fam in _families(grid):
        verts, grads, m, dm, psi = _simplex_state(fam, rule, u)
        W = fam.weight
        E = E + W * np.sum(psi * m)
        parts = []
        for k in range(len(verts)):
            term = W * psi * dm[k]
            for g, cs in zip(grads, fam.coeffs):
                if cs[k]:
                    term = term + (W * cs[k]) * (g / psi) * m
            parts.append(term)
        G = G + fam.scatter(parts)
    return E, G


def lagged_system(u, grid):
    """Split the energy gradient as ``K(u) u + S(u)`` with ``K`` sparse.

    ``K`` is a weighted graph Laplacian whose edge weights freeze ``m/psi``
    at ``u``; semi-implicit stepping treats ``K`` implicitly.
    """
    rule = _rule(grid)
    ids = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for fam in _families(grid):
        _, _, m, _, psi = _simplex_state(fam, rule, u)
        kappa = fam.weight * m / psi
        vid = fam.take(ids)
        for cs in fam.coeffs:
            i, j = [k for k, c in enumerate(cs) if c]
            kv = np.broadcast_to(kappa * cs[j] ** 2, vid[i].shape).ravel()
            a, b = vid[i].ravel(), vid[j].ravel()
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [kv, kv, -kv, -kv]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    _, G = energy_gradient_array(u, grid)
    S = G.ravel() - K @ u.ravel()
    return K, S.reshape(grid.shape)


def scheme_rhs_array(u, grid, scheme="variational"):
    """Right-hand side of the discrete flow; zero on Dirichlet boundary nodes.

    Accepts complex input (complex-step differentiation).
    """
    _check_scheme(scheme)
    v = area_element_array(u, grid)
    if scheme == "flux":
        rhs = v * div_flux_array(u, grid) - 1
    else:
        _, G = energy_gradient_array(u, grid)
        rhs = -v * G / (grid.quadrature_weights() * _exp_weight(u))
    if not grid.periodic:
        rhs = np.where(grid.boundary_mask(), 0.0, rhs)
    return rhs


def tmcf_rhs(u: ScalarField, scheme: str = "flux") -> ScalarField:
    """``v * div(Du/v) - 1`` at interior nodes, 0 on Dirichlet boundary nodes.

    The default ``"flux"`` scheme is the literal midpoint-flux formula;
    ``"variational"`` returns the right-hand side the time stepper uses.
    """
    return ScalarField(u.grid, scheme_rhs_array(u.values, u.grid, scheme))


def energy(u: ScalarField, scheme: str = "variational") -> float:
    """Weighted area ``int sqrt(1+|Du|^2) e^u dx``.

    ``"variational"`` gives the P1 simplex quadrature whose gradient drives
    the default flow; ``"flux"`` gives trapezoidal ``integrate(v, e^u)``.
    """
    _check_scheme(scheme)
    if scheme == "flux":
        v = area_element_array(u.values, u.grid)
        return integrate(ScalarField(u.grid, v), ScalarField(u.grid, _exp_weight(u.values)))
    E, _ = energy_gradient_array(u.values, u.grid)
    return float(E)


def _dissipation_from_rhs(rhs, v, eu, grid, measure):
    # H + 1/v = -rhs / v for the discrete mean curvature of the scheme
    w = grid.quadrature_weights()
    if measure == "surface":
        return float(np.sum(w * eu * rhs * rhs / v))
    if measure == "coordinate":
        return float(np.sum(w * eu * rhs * rhs / (v * v)))
    raise ValueError(f"unknown measure {measure!r}")


def dissipation(
    u: ScalarField, scheme: str = "variational", measure: str = "surface", include_boundary: bool = True
) -> float:
    """``int (H + 1/v)^2 dm`` over the grid.

    ``measure="surface"`` uses ``dm = e^u v dx``, the weighted hypersurface
    measure for which ``dF/dt = -D`` along the flow. ``measure="coordinate"``
    uses ``e^u dx``; it is bounded by the surface version since ``v >= 1``.

    Interior nodes use the scheme's discrete curvature. Dirichlet boundary
    nodes use the pointwise curvature from :func:`graph_geometry` unless
    ``include_boundary`` is False, which gives the sum that matches ``dF/dt``
    when the boundary is held fixed.
    """
    rhs = scheme_rhs_array(u.values, u.grid, scheme)
    if include_boundary and not u.grid.periodic:
        geo = graph_geometry(u)
        mask = u.grid.boundary_mask()
        rhs = np.where(mask, -geo.v.values * geo.H.values - 1, rhs)
    v = area_element_array(u.values, u.grid)
    return _dissipation_from_rhs(rhs, v, _exp_weight(u.values), u.grid, measure)


# time stepping ----------------------------------------------------------------


def cfl_limit(grid: StructuredGrid) -> float:
    """Explicit Euler bound ``h_min^2 / (2n)``."""
    return grid.h_min**2 / (2 * grid.dim)


@dataclass
class GraphFlowState:
    u: ScalarField
    t: float
    dt: float
    boundary_values: np.ndarray | None = None

    def __post_init__(self):
        grid = self.u.grid
        if grid.periodic:
            self.boundary_values = None
        elif self.boundary_values is None:
            self.boundary_values = self.u.values[grid.boundary_mask()].copy()
        else:
            bv = np.asarray(self.boundary_values, dtype=float)
            if bv.shape != (int(grid.boundary_mask().sum()),):
                raise GridError("boundary data must give one value per boundary node")
            self.boundary_values = bv


def boundary_values_of(u: ScalarField) -> np.ndarray:
    return u.values[u.grid.boundary_mask()].copy()


def _raise_if_blown_up(values, t):
    bad = ~np.isfinite(values)
    if bad.any():
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise BlowUpError(node, t)


def _semi_implicit_update(u, grid, dt):
    K, S = lagged_system(u, grid)
    M = area_element_array(u, grid) / (grid.quadrature_weights() * _exp_weight(u))
    A = sp.identity(grid.size, format="csr") + dt * sp.diags(M.ravel()) @ K
    b = (u - dt * M * S).ravel()
    if grid.periodic:
        return spla.spsolve(A.tocsc(), b).reshape(grid.shape)
    free = grid.interior_mask().ravel()
    fixed = ~free
    out = u.ravel().copy()
    rhs = b[free] - A[free][:, fixed] @ out[fixed]
    out[free] = spla.spsolve(A[free][:, free].tocsc(), rhs)
    return out.reshape(grid.shape)


def step(state: GraphFlowState, scheme: str = "variational", stepping: str = "explicit") -> GraphFlowState:
    """Advance one time step and reimpose the Dirichlet data."""
    grid = state.u.grid
    u = state.u.values
    if stepping == "explicit":
        limit = cfl_limit(grid)
        if state.dt > limit * (1 + 1e-12):
            raise CFLError(state.dt, limit)
        new = u + state.dt * scheme_rhs_array(u, grid, scheme)
    elif stepping == "semi-implicit":
        if scheme != "variational":
            raise ValueError("semi-implicit stepping needs the variational scheme")
        new = _semi_implicit_update(u, grid, state.dt)
    else:
        raise ValueError(f"unknown stepping {stepping!r}")
    _raise_if_blown_up(new, state.t + state.dt)
    if not grid.periodic:
        new[grid.boundary_mask()] = state.boundary_values
    return GraphFlowState(ScalarField(grid, new), state.t + state.dt, state.dt, state.boundary_values)


@dataclass
class DiagnosticsRecord:
    t: float
    F: float
    D: float
    sup_dtu: float
    sup_Du: float
    min_H_minus_betaVnu: float
    min_pinch_eig: float
    cumulative_dissipation: float
    # not part of the CSV schema
    min_H_minus_beta1Vnu: float = float("nan")

    def row(self):
        return [getattr(self, c) for c in DIAGNOSTIC_COLUMNS]


@dataclass
class FlowRunSpec:
    u0: ScalarField
    t_end: float
    dt: float | None = None
    boundary_values: np.ndarray | None = None
    tol_stationary: float = 1e-5
    record_interval: float = 0.1
    beta: float = 1.0
    beta1: float | None = None
    scheme: str = "variational"
    stepping: str = "explicit"
    keep_states: bool = False
    max_steps: int | None = None
    identity_floor: float = 1e-6


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    u: ScalarField
    status: str
    steps: int
    dt: float
    # largest per-step increase of F, and largest |dF/dt + D| / D over steps
    # with D above the identity floor
    max_energy_increase: float = -np.inf
    max_identity_defect: float = 0.0
    states: list[tuple[float, np.ndarray]] = field(default_factory=list)

    @property
    def initial_energy(self):
        return self.records[0].F


def _diagnostics(u, grid, t, E, D, rhs, cum, spec):
    geo = graph_geometry(ScalarField(grid, u))
    Vnu = geo.Vnu.values
    gap = spec.beta * Vnu - geo.H.values
    pinch = geo.sff_min_eig.values + spec.beta * Vnu / grid.dim
    gap1 = float("nan")
    if spec.beta1 is not None:
        gap1 = float(np.min(geo.H.values - spec.beta1 * Vnu))
    Du = gradient_array(u, grid)
    return DiagnosticsRecord(
        t=t,
        F=float(E),
        D=float(D),
        sup_dtu=float(np.max(np.abs(rhs))),
        sup_Du=float(np.max(np.sqrt(np.sum(Du * Du, axis=0)))),
        min_H_minus_betaVnu=float(gap.min()),
        min_pinch_eig=float(pinch.min()),
        cumulative_dissipation=float(cum),
        min_H_minus_beta1Vnu=gap1,
    )


def _evaluate(u, grid, scheme):
    """Energy, rhs, dissipation and area element at one state."""
    v = area_element_array(u, grid)
    eu = _exp_weight(u)
    if scheme == "variational":
        E, G = energy_gradient_array(u, grid)
        rhs = -v * G / (grid.quadrature_weights() * eu)
        if not grid.periodic:
            rhs[grid.boundary_mask()] = 0.0
    else:
        rhs = scheme_rhs_array(u, grid, scheme)
        E = float(np.sum(grid.quadrature_weights() * v * eu))
    D = _dissipation_from_rhs(rhs, v, eu, grid, "surface")
    return float(E), rhs, D


def run(spec: FlowRunSpec) -> RunResult:
    """Step the flow until stationary (``sup|u_t| < tol``) or ``t_end``.

    Diagnostics are recorded at t=0, every ``record_interval`` and at the
    final state. Cumulative dissipation integrates D by the trapezoid rule.
    """
    _check_scheme(spec.scheme)
    grid = spec.u0.grid
    u = spec.u0.values.copy()
    bv = spec.boundary_values
    if not grid.periodic:
        if bv is None:
            bv = boundary_values_of(spec.u0)
        bv = np.asarray(bv, dtype=float)
        if not np.allclose(u[grid.boundary_mask()], bv, rtol=0, atol=1e-12):
            raise GridError("initial data must match the boundary data on the boundary")
    dt = spec.dt if spec.dt is not None else cfl_limit(grid)
    if spec.stepping == "explicit" and dt > cfl_limit(grid) * (1 + 1e-12):
        raise CFLError(dt, cfl_limit(grid))
    state = GraphFlowState(ScalarField(grid, u), 0.0, dt, bv)

    records: list[DiagnosticsRecord] = []
    states = []
    E, rhs, D = _evaluate(u, grid, spec.scheme)
    cum = 0.0
    next_record = 0.0
    k = 0
    max_inc = -np.inf
    max_defect = 0.0
    status = "t_end_reached"
    while True:
        t = state.t
        stationary = float(np.max(np.abs(rhs))) < spec.tol_stationary
        done = stationary or t >= spec.t_end * (1 - 1e-12)
        if spec.max_steps is not None and k >= spec.max_steps:
            done = True
        if t >= next_record * (1 - 1e-12) or done:
            records.append(_diagnostics(state.u.values, grid, t, E, D, rhs, cum, spec))
            if spec.keep_states:
                states.append((t, state.u.values.copy()))
            while next_record <= t * (1 + 1e-12):
                next_record += spec.record_interval
        if done:
            if stationary:
                status = "converged"
            break
        state.dt = min(dt, spec.t_end - t) if spec.t_end - t > 1e-14 else dt
        try:
            if spec.stepping == "explicit":
                # reuse the right-hand side evaluated for the diagnostics
                new = state.u.values + state.dt * rhs
                _raise_if_blown_up(new, t + state.dt)
                if not grid.periodic:
                    new[grid.boundary_mask()] = state.boundary_values
                state = GraphFlowState(ScalarField(grid, new), t + state.dt, state.dt, state.boundary_values)
            else:
                state = step(state, spec.scheme, spec.stepping)
        except BlowUpError as exc:
            exc.records = records
            raise
        k += 1
        E_new, rhs_new, D_new = _evaluate(state.u.values, grid, spec.scheme)
        max_inc = max(max_inc, E_new - E)
        if D > spec.identity_floor:
            max_defect = max(max_defect, abs((E_new - E) / state.dt + D) / D)
        cum += 0.5 * state.dt * (D + D_new)
        E, rhs, D = E_new, rhs_new, D_new
        if k % 5000 == 0:
            log.debug("step %d t=%.4f F=%.8g D=%.3e sup|u_t|=%.3e", k, state.t, E, D, np.max(np.abs(rhs)))
    return RunResult(
        records=records,
        u=state.u,
        status=status,
        steps=k,
        dt=dt,
        max_energy_increase=max_inc,
        max_identity_defect=max_defect,
        states=states,
    )


def write_diagnostics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for r in records:
            w.writerow([format(x, ".17g") for x in r.row()])


def read_diagnostics_csv(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != DIAGNOSTIC_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [DiagnosticsRecord(*[float(x) for x in row]) for row in rows[1:]]
