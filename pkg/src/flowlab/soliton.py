"""Translating solitons: the grim reaper, the rotationally symmetric bowl,
and a Newton solver for the stationary Dirichlet problem.

A translating soliton for V = -e_{n+1} is a graph with ``v div(Du/v) = 1``.
In one dimension this is the grim reaper ``-log cos x``; radially symmetric
entire solutions satisfy

    phi'' / (1 + phi'^2) + (n - 1) phi' / r = 1,   phi(0) = phi'(0) = 0.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicHermiteSpline

from .graphflow import scheme_rhs_array
from .grid import GridError, ScalarField, StructuredGrid

log = logging.getLogger(__name__)


class SolitonDomainError(ValueError):
    pass


class BowlIntegrationError(RuntimeError):
    def __init__(self, r_last):
        super().__init__(f"bowl integration produced non-finite values after r={r_last:g}")
        self.r_last = r_last


class NewtonError(RuntimeError):
    def __init__(self, residual, iterations):
        super().__init__(f"Newton iteration failed after {iterations} iterations, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations


# grim reaper ----------------------------------------------------------------


def _check_reaper_domain(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= np.pi / 2):
        raise SolitonDomainError("grim reaper is defined for |x| < pi/2 only")
    return x


def grim_reaper(x):
    """Height ``-log cos x`` of the 1D translating soliton."""
    return -np.log(np.cos(_check_reaper_domain(x)))


def grim_reaper_slope(x):
    return np.tan(_check_reaper_domain(x))


# bowl -----------------------------------------------------------------------


def bowl_series_coefficients(n):
    """Coefficients of r^2, r^4, r^6, r^8 in the even expansion at r = 0."""
    a2 = 1 / (2 * n)
    a4 = 1 / (4 * n**3 * (n + 2))
    a6 = -(n - 3) / (6 * n**5 * (n + 2) * (n + 4))
    a8 = (n**3 - 6 * n**2 - 8 * n + 30) / (8 * n**7 * (n + 2) ** 2 * (n + 4) * (n + 6))
    return a2, a4, a6, a8


def _series(n, r):
    c = bowl_series_coefficients(n)
    phi = sum(ck * r ** (2 * k + 2) for k, ck in enumerate(c))
    dphi = sum((2 * k + 2) * ck * r ** (2 * k + 1) for k, ck in enumerate(c))
    return phi, dphi


_SUBSTEP_RADIUS = 1.0


def _radial_rhs(n, r, y):
    phi, p = y
    return np.array([p, (1 + p * p) * (1 - (n - 1) * p / r)])


@dataclass
class SolitonProfile:
    n: int
    r: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.r, self.phi, self.dphi)

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r > self.r_max * (1 + 1e-12)):
            raise SolitonDomainError(f"profile only reaches r={self.r_max:g}")
        return self._spline(r)

    def slope(self, r):
        return self._spline(np.asarray(r, dtype=float), 1)

    def radial_residual(self) -> np.ndarray:
        """ODE defect at interior samples, with phi'' from a 4th-order
        central difference of the sampled slope."""
        p, h, r = self.dphi, self.h, self.r
        d2 = (-p[4:] + 8 * p[3:-1] - 8 * p[1:-3] + p[:-4]) / (12 * h)
        pm, rm = p[2:-2], r[2:-2]
        return d2 / (1 + pm**2) + (self.n - 1) * pm / rm - 1

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.radial_residual())))

    def second_derivative_at_zero(self, r_fit: float = 0.2) -> float:
        """phi''(0) from a least-squares even polynomial fit near the origin."""
        sel = self.r <= min(r_fit, self.r_max)
        r = self.r[sel]
        basis = np.stack([r**2, r**4, r**6, r**8], axis=1)
        coef, *_ = np.linalg.lstsq(basis, self.phi[sel], rcond=None)
        return 2 * coef[0]

    def lift(self, grid: StructuredGrid, center=None) -> ScalarField:
        """``w(x) = phi(|x - center|)`` sampled on a 2D (or 1D) grid."""
        X = grid.mesh()
        center = center if center is not None else (0.0,) * grid.dim
        rad = np.sqrt(sum((x - c) ** 2 for x, c in zip(X, center)))
        return ScalarField(grid, self(rad))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "phi", "dphi"])
            for row in zip(self.r, self.phi, self.dphi):
                w.writerow([format(x, ".17g") for x in row])

    @classmethod
    def from_csv(cls, path, n):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(n, data[:, 0], data[:, 1], data[:, 2])


def bowl_profile(n: int, r_max: float, h: float) -> SolitonProfile:
    """Integrate the radial soliton equation on ``r = 0, h, 2h, ...``.

    Samples up to ``10 h`` come from the series at the origin; classical RK4
    with step ``h`` continues from there (split into substeps of at most
    ``r h`` while ``r < 1``).
    """
    if n < 2:
        raise ValueError("bowl profile needs n >= 2 (n = 1 is the grim reaper)")
    if not (r_max > 0 and h > 0):
        raise ValueError("r_max and h must be positive")
    K = int(np.ceil(r_max / h - 1e-9))
    r = h * np.arange(K + 1)
    phi = np.empty(K + 1)
    dphi = np.empty(K + 1)
    k0 = min(10, K)
    phi[: k0 + 1], dphi[: k0 + 1] = _series(n, r[: k0 + 1])
    y = np.array([phi[k0], dphi[k0]])
    for k in range(k0, K):
        # the (n-1)/r coefficient varies on the scale r, so steps near the
        # origin are split to keep the local error O(h^5) rather than O(1)
        m = max(1, int(np.ceil(_SUBSTEP_RADIUS / r[k])))
        dt = h / m
        for j in range(m):
            y = _rk4(n, r[k] + j * dt, y, dt)
        if not np.all(np.isfinite(y)):
            raise BowlIntegrationError(r[k])
        phi[k + 1], dphi[k + 1] = y
    return SolitonProfile(n, r, phi, dphi)


def _rk4(n, r, y, h):
    k1 = _radial_rhs(n, r, y)
    k2 = _radial_rhs(n, r + h / 2, y + h / 2 * k1)
    k3 = _radial_rhs(n, r + h / 2, y + h / 2 * k2)
    k4 = _radial_rhs(n, r + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


# stationary Dirichlet problem -------------------------------------------------


def boundary_interpolant(grid: StructuredGrid, boundary_values) -> ScalarField:
    """Linear (1D) or transfinite (2D) interpolation of Dirichlet data."""
    if grid.periodic:
        raise GridError("boundary interpolation needs a dirichlet grid")
    mask = grid.boundary_mask()
    u = np.zeros(grid.shape)
    u[mask] = boundary_values
    if grid.dim == 1:
        x = grid.axes()[0]
        s = (x - x[0]) / (x[-1] - x[0])
        return ScalarField(grid, (1 - s) * u[0] + s * u[-1])
    x, y = grid.axes()
    s = ((x - x[0]) / (x[-1] - x[0]))[:, None]
    t = ((y - y[0]) / (y[-1] - y[0]))[None, :]
    left, right = u[0, :][None, :], u[-1, :][None, :]
    bottom, top = u[:, 0][:, None], u[:, -1][:, None]
    coons = (
        (1 - s) * left
        + s * right
        + (1 - t) * bottom
        + t * top
        - (1 - s) * (1 - t) * u[0, 0]
        - s * (1 - t) * u[-1, 0]
        - (1 - s) * t * u[0, -1]
        - s * t * u[-1, -1]
    )
    coons[mask] = u[mask]
    return ScalarField(grid, coons)


def residual_jacobian(u, grid, scheme="variational", step=1e-30):
    """Sparse Jacobian of the interior residual with respect to interior heights.

    Every residual depends on its 3^n neighbourhood only, so nodes sharing
    ``index mod 3`` are perturbed together; complex-step differentiation
    gives each column group exactly, with no subtractive cancellation.
    """
    free = grid.interior_mask()
    ids = -np.ones(grid.shape, dtype=np.int64)
    ids[free] = np.arange(int(free.sum()))
    idx = np.indices(grid.shape)
    rows, cols, vals = [], [], []
    for color in np.ndindex(*(3,) * grid.dim):
        pick = free.copy()
        for k, c in enumerate(color):
            pick &= idx[k] % 3 == c
        du = u + 1j * step * pick
        d = np.imag(scheme_rhs_array(du, grid, scheme)) / step
        # the perturbed node inside each residual's 3^n stencil
        target = []
        for k, c in enumerate(color):
            off = (c - idx[k] + 1) % 3 - 1
            target.append(idx[k] + off)
        inside = free.copy()
        for k in range(grid.dim):
            inside &= (target[k] >= 0) & (target[k] < grid.shape[k])
        r_nodes = np.nonzero(inside)
        t_nodes = tuple(t[r_nodes] for t in target)
        col = ids[t_nodes]
        ok = col >= 0
        rows.append(ids[r_nodes][ok])
        cols.append(col[ok])
        vals.append(d[r_nodes][ok])
    n = int(free.sum())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


@dataclass
class NewtonResult:
    u: ScalarField
    iterations: int
    residual: float


def stationary_solve(
    grid: StructuredGrid,
    boundary_values,
    u_init: ScalarField | None = None,
    scheme: str = "variational",
    tol: float = 1e-10,
    max_iters: int = 50,
    max_halvings: int = 30,
) -> NewtonResult:
    """Damped Newton iteration for ``v div(Du/v) - 1 = 0`` with Dirichlet data.

    Steps are halved until the residual 2-norm decreases; convergence is
    declared on the sup-norm.
    """
    if grid.periodic:
        raise GridError("stationary_solve needs a dirichlet grid")
    mask = grid.boundary_mask()
    bv = np.asarray(boundary_values, dtype=float)
    if u_init is None:
        u_init = boundary_interpolant(grid, bv)
    u = u_init.values.copy()
    if not np.allclose(u[mask], bv, rtol=0, atol=1e-12):
        raise GridError("u_init must match the boundary data")
    u[mask] = bv
    free = ~mask

    def residual(w):
        return scheme_rhs_array(w, grid, scheme)[free]

    R = residual(u)
    for it in range(max_iters + 1):
        sup = float(np.max(np.abs(R)))
        log.debug("newton %d: sup residual %.3e", it, sup)
        if sup < tol:
            return NewtonResult(ScalarField(grid, u), it, sup)
        if it == max_iters:
            break
        J = residual_jacobian(u, grid, scheme)
        du = spla.spsolve(J.tocsc(), -R)
        norm = np.linalg.norm(R)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = u.copy()
            trial[free] += lam * du
            with np.errstate(all="ignore"):
                try:
                    Rt = residual(trial)
                except (ValueError, OverflowError):
                    Rt = None
            if Rt is not None and np.all(np.isfinite(Rt)) and np.linalg.norm(Rt) < norm:
                break
            lam /= 2
        else:
            raise NewtonError(sup, it)
        u, R = trial, Rt
    raise NewtonError(float(np.max(np.abs(R))), max_iters)


def barrier_offsets(u0: ScalarField, w: ScalarField) -> float:
    """Smallest ``C >= 0`` with ``w - C <= u0 <= w + C`` at every node."""
    if u0.grid != w.grid:
        raise GridError("u0 and w live on different grids")
    return float(max(0.0, np.max(np.abs(u0.values - w.values))))
