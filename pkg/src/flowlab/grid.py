"""Structured rectangle grids, nodal fields and the finite-difference operators
shared by the graph flow and the soliton solvers.

All operators work on 1D or 2D grids. Arrays are indexed ``ij`` style, so
``values[i, j]`` sits at ``(x[i], y[j])``. Dirichlet grids carry their
boundary layer as ordinary nodes; periodic grids drop the node at the right
end of every axis because it is identified with the left one.

The array-level helpers (``*_array``) accept complex input as well, which the
Newton solver relies on for complex-step Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

BOUNDARY_KINDS = ("dirichlet", "periodic")


class GridError(ValueError):
    """Invalid grid, mismatched grids or non-finite field data."""


@dataclass(frozen=True)
class StructuredGrid:
    extents: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]
    boundary: str = "dirichlet"

    def __post_init__(self):
        extents = tuple((float(a), float(b)) for a, b in self.extents)
        nodes = tuple(int(n) for n in self.nodes)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "nodes", nodes)
        if len(extents) not in (1, 2) or len(extents) != len(nodes):
            raise GridError("grid must be 1D or 2D with one node count per axis")
        if self.boundary not in BOUNDARY_KINDS:
            raise GridError(f"unknown boundary kind {self.boundary!r}")
        for (a, b), n in zip(extents, nodes):
            if not b > a:
                raise GridError(f"empty interval [{a}, {b}]")
            if n < 3:
                raise GridError("need at least 3 nodes per axis")

    @classmethod
    def box(cls, lo, hi, n, dim=1, boundary="dirichlet"):
        """Square grid ``[lo, hi]^dim`` with ``n`` nodes per axis."""
        return cls(((lo, hi),) * dim, (n,) * dim, boundary)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.extents, self.nodes))

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def shape(self) -> tuple[int, ...]:
        if self.periodic:
            return tuple(n - 1 for n in self.nodes)
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        out = []
        for (a, b), n in zip(self.extents, self.nodes):
            x = np.linspace(a, b, n)
            out.append(x[:-1] if self.periodic else x)
        return out

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        """True on Dirichlet boundary nodes (never true on periodic grids)."""
        return self._boundary_mask

    @cached_property
    def _boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            mask.flags.writeable = False
            return mask
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        mask.flags.writeable = False
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoidal weights (dirichlet) or rectangle weights (periodic)."""
        return self._weights

    @cached_property
    def _weights(self):
        w = np.ones(self.shape)
        for k, h in enumerate(self.spacing):
            wk = np.full(self.shape[k], h)
            if not self.periodic:
                wk[0] = wk[-1] = h / 2
            shape = [1] * self.dim
            shape[k] = -1
            w = w * wk.reshape(shape)
        w.flags.writeable = False
        return w


@dataclass
class ScalarField:
    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"value array has shape {self.values.shape}, grid expects {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise GridError(f"non-finite value at node {tuple(int(i) for i in bad)}")

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(*grid.mesh()))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    grid: StructuredGrid
    values: np.ndarray  # shape (dim, *grid.shape)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.dim, *self.grid.shape):
            raise GridError("vector field needs one component per axis at every node")

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))


# array-level operators ------------------------------------------------------


def partial_array(u, grid, axis):
    """Second-order first derivative along one axis."""
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2 * h)
    return np.gradient(u, h, axis=axis, edge_order=2)


def gradient_array(u, grid):
    return np.stack([partial_array(u, grid, k) for k in range(grid.dim)])


def hessian_array(u, grid):
    """Second-order Hessian, shape ``(dim, dim, *shape)``."""
    d = grid.dim
    hess = np.empty((d, d, *u.shape), dtype=u.dtype)
    for k in range(d):
        h = grid.spacing[k]
        if grid.periodic:
            hess[k, k] = (np.roll(u, -1, k) - 2 * u + np.roll(u, 1, k)) / h**2
        else:
            hess[k, k] = _second_difference(u, h, k)
    if d == 2:
        hess[0, 1] = hess[1, 0] = partial_array(partial_array(u, grid, 0), grid, 1)
    return hess


def _second_difference(u, h, axis):
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
    if u.shape[0] >= 4:
        # four-point one-sided stencil keeps second order at the ends
        out[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h**2
        out[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h**2
    else:
        out[0] = out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def _forward(u, grid, axis):
    """Forward difference to the midpoints along ``axis``."""
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(u, -1, axis) - u) / h
    return np.diff(u, axis=axis) / h


def _midpoint_average(a, grid, axis):
    if grid.periodic:
        return 0.5 * (a + np.roll(a, -1, axis))
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (a[tuple(lo)] + a[tuple(hi)])


def midpoint_fluxes(u, grid):
    """Flux ``Du/v`` normal to each family of cell faces.

    Entry ``k`` lives at the midpoints between neighbours along axis ``k``.
    The derivative across the face is the compact difference; transverse
    derivatives are averages of nodal central differences.
    """
    fluxes = []
    for k in range(grid.dim):
        p = _forward(u, grid, k)
        sq = p * p
        for j in range(grid.dim):
            if j != k:
                q = _midpoint_average(partial_array(u, grid, j), grid, k)
                sq = sq + q * q
        fluxes.append(p / np.sqrt(1 + sq))
    return fluxes


def div_flux_array(u, grid):
    """``div(Du / sqrt(1 + |Du|^2))`` in conservative form.

    Interior (and all periodic) nodes difference the midpoint fluxes.
    Dirichlet boundary nodes fall back to one-sided differentiation of the
    nodal flux; those values are not conservative and callers should treat
    them as diagnostics only.
    """
    fluxes = midpoint_fluxes(u, grid)
    out = np.zeros(u.shape, dtype=np.result_type(u, float))
    for k, (F, h) in enumerate(zip(fluxes, grid.spacing)):
        if grid.periodic:
            out = out + (F - np.roll(F, 1, k)) / h
        else:
            lo = [slice(1, -1) if j == k else slice(None) for j in range(grid.dim)]
            d = np.zeros_like(out)
            d[tuple(lo)] = np.diff(F, axis=k) / h
            out = out + d
    if not grid.periodic:
        bnd = grid.boundary_mask()
        Du = gradient_array(u, grid)
        v = np.sqrt(1 + np.sum(Du * Du, axis=0))
        one_sided = sum(partial_array(Du[k] / v, grid, k) for k in range(grid.dim))
        out = np.where(bnd, one_sided, out)
    return out


# public operators -----------------------------------------------------------


def gradient(u: ScalarField) -> VectorField:
    """Central differences inside, one-sided second order at Dirichlet edges,
    wrap-around central differences on periodic grids."""
    return VectorField(u.grid, gradient_array(u.values, u.grid))


def div_flux(u: ScalarField) -> ScalarField:
    """Conservative discretization of ``div(Du/sqrt(1+|Du|^2))``.

    Boundary entries on Dirichlet grids are one-sided approximations; use
    ``grid.interior_mask()`` to select the conservative nodes.
    """
    return ScalarField(u.grid, div_flux_array(u.values, u.grid))


def integrate(f: ScalarField, weight: ScalarField | None = None) -> float:
    """Trapezoidal (dirichlet) or rectangle (periodic) quadrature of f*weight."""
    vals = f.values
    if weight is not None:
        if weight.grid != f.grid:
            raise GridError("integrand and weight live on different grids")
        vals = vals * weight.values
    return float(np.sum(vals * f.grid.quadrature_weights()))


# snapshot files -------------------------------------------------------------

_MAGIC = "# flowlab snapshot v1"


def write_snapshot(path, u: ScalarField) -> Path:
    """Plain-text header followed by row-major node values.

    Values are written with 17 significant digits so a round trip through
    :func:`read_snapshot` is bit-exact.
    """
    g = u.grid
    lines = [
        _MAGIC,
        f"dim {g.dim}",
        "extents " + " ".join(f"{a!r} {b!r}" for a, b in g.extents),
        "nodes " + " ".join(str(n) for n in g.nodes),
        f"boundary {g.boundary}",
    ]
    vals = np.atleast_2d(u.values)
    for row in vals:
        lines.append(" ".join(format(x, ".17g") for x in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path) -> ScalarField:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _MAGIC:
        raise GridError(f"{path}: not a flowlab snapshot")
    header = {}
    for line in text[1:5]:
        key, _, rest = line.partition(" ")
        header[key] = rest.split()
    try:
        dim = int(header["dim"][0])
        ext = [float(s) for s in header["extents"]]
        nodes = tuple(int(s) for s in header["nodes"])
        boundary = header["boundary"][0]
    except (KeyError, IndexError, ValueError) as exc:
        raise GridError(f"{path}: malformed snapshot header") from exc
    grid = StructuredGrid(tuple(zip(ext[0::2], ext[1::2])), nodes, boundary)
    if grid.dim != dim:
        raise GridError(f"{path}: dim does not match extents")
    rows = [[float(s) for s in line.split()] for line in text[5:] if line.strip()]
    values = np.array(rows, dtype=float).reshape(grid.shape)
    return ScalarField(grid, values)
