"""Parametric translating curve flow in the plane.

A polyline ``X_i`` moves with normal speed ``f = <V, nu> - H``. Geometry uses
three-point Lagrange stencils in arclength, so nonuniform vertex spacing is
handled directly. Closed curves use the outward normal, open graph-like
curves the upward (left) normal. With these conventions a circle of radius R
has ``a11 = -1/R`` and ``H = -a11 = 1/R``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .graphflow import DIAGNOSTIC_COLUMNS, BlowUpError, CFLError, OverflowGuardError

log = logging.getLogger(__name__)

CURVE_COLUMNS = DIAGNOSTIC_COLUMNS + ("min_H", "min_Vnu", "sup_B2")
MIN_SEGMENT = 1e-12


class CurveError(ValueError):
    pass


@dataclass
class CurveState:
    points: np.ndarray  # (N, 2)
    closed: bool
    t: float = 0.0
    V: tuple[float, float] = (0.0, -1.0)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.V = tuple(float(c) for c in self.V)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise CurveError("points must have shape (N, 2)")
        if len(self.points) < 8:
            raise CurveError("a curve needs at least 8 points")
        if not np.all(np.isfinite(self.points)):
            raise CurveError("non-finite vertex coordinates")
        seg = segment_lengths(self.points, self.closed)
        if seg.min() < MIN_SEGMENT:
            raise CurveError(f"degenerate segment at index {int(np.argmin(seg))}")

    @property
    def n_points(self) -> int:
        return len(self.points)

    def with_points(self, points, t=None) -> "CurveState":
        return CurveState(points, self.closed, self.t if t is None else t, self.V)


def segment_lengths(points, closed):
    d = np.diff(points, axis=0)
    if closed:
        d = np.vstack([d, points[:1] - points[-1:]])
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)


def signed_area(points) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_simple(points, closed) -> bool:
    """True when no two non-adjacent segments intersect."""
    P = points
    Q = np.roll(P, -1, axis=0) if closed else P[1:]
    P = P if closed else P[:-1]
    m = len(P)
    d = Q - P

    def cross(a, b):
        return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

    i, j = np.triu_indices(m, k=2)
    if closed:
        keep = ~((i == 0) & (j == m - 1))
        i, j = i[keep], j[keep]
    r, s = d[i], d[j]
    qp = P[j] - P[i]
    den = cross(r, s)
    ok = np.abs(den) > 1e-300
    ta = np.where(ok, cross(qp, s) / np.where(ok, den, 1), -1)
    tb = np.where(ok, cross(qp, r) / np.where(ok, den, 1), -1)
    hit = ok & (ta >= 0) & (ta <= 1) & (tb >= 0) & (tb <= 1)
    return not bool(np.any(hit))


# constructors ---------------------------------------------------------------


def circle(radius=1.0, n=256, center=(0.0, 0.0), V=(0.0, 0.0)) -> CurveState:
    th = 2 * np.pi * np.arange(n) / n
    pts = np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)
    return CurveState(pts, True, 0.0, V)


def ellipse(a=2.0, b=1.0, n=256, V=(0.0, -1.0)) -> CurveState:
    th = 2 * np.pi * np.arange(n) / n
    return CurveState(np.stack([a * np.cos(th), b * np.sin(th)], axis=1), True, 0.0, V)


def graph_curve(x, y, V=(0.0, -1.0)) -> CurveState:
    return CurveState(np.stack([np.asarray(x, float), np.asarray(y, float)], axis=1), False, 0.0, V)


def grim_reaper_curve(a=-1.0, b=1.0, n=129, V=(0.0, -1.0)) -> CurveState:
    x = np.linspace(a, b, n)
    return graph_curve(x, -np.log(np.cos(x)), V)


# geometry -------------------------------------------------------------------


def _lagrange_weights(d0, d1, d2):
    """First and second derivative weights at offset 0 for nodes at d0, d1, d2."""
    D = (d0, d1, d2)
    w1, w2 = [], []
    for j in range(3):
        k, m = [i for i in range(3) if i != j]
        den = (D[j] - D[k]) * (D[j] - D[m])
        w1.append(-(D[k] + D[m]) / den)
        w2.append(2 / den)
    return w1, w2


def _stencils(seg, closed):
    """Neighbour indices and derivative weights for every vertex."""
    n = len(seg) if closed else len(seg) + 1
    idx = np.arange(n)
    if closed:
        h1 = np.roll(seg, 1)
        h2 = seg
        nb = (np.roll(idx, 1), idx, np.roll(idx, -1))
        w1, w2 = _lagrange_weights(-h1, np.zeros(n), h2)
        return nb, w1, w2
    h1 = np.empty(n)
    h2 = np.empty(n)
    h1[1:-1], h2[1:-1] = seg[:-1], seg[1:]
    d0, d1, d2 = -h1, np.zeros(n), h2
    nb = [np.clip(idx - 1, 0, n - 1), idx.copy(), np.clip(idx + 1, 0, n - 1)]
    # one-sided stencils at the ends
    nb[0][0], nb[1][0], nb[2][0] = 0, 1, 2
    d0[0], d1[0], d2[0] = 0.0, seg[0], seg[0] + seg[1]
    nb[0][-1], nb[1][-1], nb[2][-1] = n - 3, n - 2, n - 1
    d0[-1], d1[-1], d2[-1] = -(seg[-1] + seg[-2]), -seg[-1], 0.0
    w1, w2 = _lagrange_weights(d0, d1, d2)
    return tuple(nb), w1, w2


def _apply(nb, w, q):
    out = w[0] * q[nb[0]] + w[1] * q[nb[1]] + w[2] * q[nb[2]]
    return out


@dataclass
class CurveGeometry:
    T: np.ndarray
    nu: np.ndarray
    a11: np.ndarray
    H: np.ndarray
    Vnu: np.ndarray
    Vt: np.ndarray
    f: np.ndarray
    ds: np.ndarray
    seg: np.ndarray
    closed: bool
    _nb: tuple = field(repr=False, default=())
    _w1: list = field(repr=False, default_factory=list)
    _w2: list = field(repr=False, default_factory=list)

    @property
    def A2(self):
        return self.a11**2

    def d_ds(self, q):
        """Arclength derivative of a per-vertex quantity."""
        return _apply(self._nb, self._w1, q)

    def d2_ds2(self, q):
        return _apply(self._nb, self._w2, q)

    def interior(self, layers=2):
        """Vertices whose derivative stencils never touch a one-sided one."""
        n = len(self.H)
        mask = np.ones(n, dtype=bool)
        if not self.closed:
            mask[:layers] = False
            mask[n - layers :] = False
        return mask


def curve_geometry(c: CurveState) -> CurveGeometry:
    X = c.points
    seg = segment_lengths(X, c.closed)
    if seg.min() < MIN_SEGMENT:
        raise CurveError(f"degenerate segment at index {int(np.argmin(seg))}")
    nb, w1, w2 = _stencils(seg, c.closed)
    Xs = np.stack([_apply(nb, w1, X[:, 0]), _apply(nb, w1, X[:, 1])], axis=1)
    Xss = np.stack([_apply(nb, w2, X[:, 0]), _apply(nb, w2, X[:, 1])], axis=1)
    T = Xs / np.sqrt(np.sum(Xs**2, axis=1))[:, None]
    if c.closed:
        # outward normal: T turned clockwise on a counter-clockwise curve
        nu = np.stack([T[:, 1], -T[:, 0]], axis=1)
        if signed_area(X) < 0:
            nu = -nu
    else:
        nu = np.stack([-T[:, 1], T[:, 0]], axis=1)
    a11 = np.sum(Xss * nu, axis=1)
    V = np.asarray(c.V)
    Vnu = nu @ V
    Vt = T @ V
    H = -a11
    if c.closed:
        ds = 0.5 * (seg + np.roll(seg, 1))
    else:
        ds = np.empty(len(X))
        ds[1:-1] = 0.5 * (seg[:-1] + seg[1:])
        ds[0], ds[-1] = 0.5 * seg[0], 0.5 * seg[-1]
    return CurveGeometry(T, nu, a11, H, Vnu, Vt, Vnu - H, ds, seg, c.closed, nb, w1, w2)


# stepping -------------------------------------------------------------------


def curve_cfl_limit(c: CurveState, cfl: float = 0.25) -> float:
    return cfl * float(segment_lengths(c.points, c.closed).min()) ** 2


def redistribute(c: CurveState) -> CurveState:
    """Resample at uniform arclength along a cubic spline through the vertices."""
    X = c.points
    seg = segment_lengths(X, c.closed)
    n = len(X)
    if c.closed:
        s = np.concatenate([[0.0], np.cumsum(seg)])
        spl = CubicSpline(s, np.vstack([X, X[:1]]), bc_type="periodic")
        new = spl(np.linspace(0, s[-1], n + 1)[:-1])
    else:
        s = np.concatenate([[0.0], np.cumsum(seg)])
        spl = CubicSpline(s, X)
        new = spl(np.linspace(0, s[-1], n))
        new[0], new[-1] = X[0], X[-1]
    return c.with_points(new)


def curve_step(
    c: CurveState,
    dt: float,
    cfl: float = 0.25,
    fixed_endpoints: bool = True,
    redistribute_after: bool = False,
) -> CurveState:
    """One explicit normal step ``X <- X + dt f nu``."""
    limit = curve_cfl_limit(c, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLError(dt, limit)
    geo = curve_geometry(c)
    new = c.points + dt * geo.f[:, None] * geo.nu
    if not c.closed and fixed_endpoints:
        new[0], new[-1] = c.points[0], c.points[-1]
    if not np.all(np.isfinite(new)):
        bad = int(np.argwhere(~np.isfinite(new))[0, 0])
        raise BlowUpError(bad, c.t + dt)
    out = c.with_points(new, c.t + dt)
    return redistribute(out) if redistribute_after else out


# identities -----------------------------------------------------------------


@dataclass
class EvolutionResiduals:
    """Residuals of the normal-speed and mean-curvature evolution equations.

    ``vnu[k]`` and ``H[k]`` belong to ``times[k]``; NaN marks vertices next to
    open ends, where the one-sided stencils are only first order.
    """

    times: np.ndarray
    vnu: list[np.ndarray]
    H: list[np.ndarray]

    def sup_vnu(self) -> float:
        return float(max(np.nanmax(np.abs(r)) for r in self.vnu))

    def sup_H(self) -> float:
        return float(max(np.nanmax(np.abs(r)) for r in self.H))


def evolution_residuals(states: list[CurveState]) -> EvolutionResiduals:
    """Centered-in-time residuals at every state that has two neighbours.

    With ``L q = q_ss - Vt q_s`` the residuals are

        dVnu/dt - L Vnu - |A|^2 Vnu   and   dH/dt - L H - |A|^2 H,

    with time derivatives taken at fixed vertex index. Only valid for purely
    normal motion (no redistribution).
    """
    if len(states) < 3:
        raise CurveError("need at least 3 consecutive states")
    geos = [curve_geometry(s) for s in states]
    times, rv, rh = [], [], []
    for k in range(1, len(states) - 1):
        g = geos[k]
        span = states[k + 1].t - states[k - 1].t
        if span <= 0:
            raise CurveError("states must be ordered in time")
        out = []
        for name in ("Vnu", "H"):
            q = getattr(g, name)
            dq = (getattr(geos[k + 1], name) - getattr(geos[k - 1], name)) / span
            res = dq - g.d2_ds2(q) + g.Vt * g.d_ds(q) - g.A2 * q
            res[~g.interior()] = np.nan
            out.append(res)
        times.append(states[k].t)
        rv.append(out[0])
        rh.append(out[1])
    return EvolutionResiduals(np.array(times), rv, rh)


@dataclass
class CurvePinchingMonitors:
    min_Vnu: float
    min_H: float
    min_beta_Vnu_minus_H: float
    min_a11_plus_beta_Vnu: float
    sup_B2: float  # NaN when the denominator is not positive everywhere


def curve_pinching_monitors(c: CurveState, beta: float, lam: float | None = None) -> CurvePinchingMonitors:
    """Sign monitors and ``sup |B|^2`` with ``B = (a11 + lam Vnu) / (beta Vnu - H)``."""
    lam = beta if lam is None else lam
    g = curve_geometry(c)
    den = beta * g.Vnu - g.H
    sup_B2 = float("nan")
    if np.all(den > 0):
        sup_B2 = float(np.max(((g.a11 + lam * g.Vnu) / den) ** 2))
    return CurvePinchingMonitors(
        float(g.Vnu.min()),
        float(g.H.min()),
        float(den.min()),
        float((g.a11 + beta * g.Vnu).min()),
        sup_B2,
    )


def _weight(points, V):
    expo = -(points @ np.asarray(V))
    top = float(np.max(expo))
    if top > 700:
        raise OverflowGuardError(top)
    return np.exp(expo)


def _vertex_ds(points, closed):
    seg = segment_lengths(points, closed)
    if closed:
        return 0.5 * (seg + np.roll(seg, 1))
    ds = np.empty(len(points))
    ds[1:-1] = 0.5 * (seg[:-1] + seg[1:])
    ds[0], ds[-1] = 0.5 * seg[0], 0.5 * seg[-1]
    return ds


def weighted_area(c: CurveState) -> float:
    """``sum_i exp(-<V, X_i>) ds_i``."""
    return float(np.sum(_weight(c.points, c.V) * _vertex_ds(c.points, c.closed)))


@dataclass
class VariationCheck:
    analytic: float
    finite_difference: float
    status: str  # "ok" or "cancellation"


def _check_endpoints(c, f):
    f = np.asarray(f, dtype=float)
    if f.shape != (c.n_points,):
        raise CurveError("perturbation needs one value per vertex")
    if not c.closed and (abs(f[0]) > 1e-14 or abs(f[-1]) > 1e-14):
        raise CurveError("perturbation must vanish at open-curve endpoints")
    return f


def first_variation_check(c: CurveState, fperturb, eps: float) -> VariationCheck:
    """``int f (H - Vnu) e^{-<V,X>} ds`` against a central difference of F."""
    f = _check_endpoints(c, fperturb)
    g = curve_geometry(c)
    w = _weight(c.points, c.V)
    analytic = float(np.sum(f * (g.H - g.Vnu) * w * g.ds))
    Fp = weighted_area(c.with_points(c.points + eps * f[:, None] * g.nu))
    Fm = weighted_area(c.with_points(c.points - eps * f[:, None] * g.nu))
    fd = (Fp - Fm) / (2 * eps)
    status = "ok"
    if abs(Fp - Fm) < 1e3 * np.finfo(float).eps * max(abs(Fp), abs(Fm)):
        status = "cancellation"
        log.warning("first variation: eps=%g too small, difference lost to rounding", eps)
    return VariationCheck(analytic, float(fd), status)


def jacobi_form(c: CurveState, fperturb, critical_tol: float = 1e-4) -> float:
    """``-sum f (L f) e^{-<V,X>} ds`` with ``L f = f_ss - Vt f_s + a11^2 f``.

    The curve must be a discrete critical point: ``|H - Vnu| < critical_tol``
    away from open ends.
    """
    f = _check_endpoints(c, fperturb)
    g = curve_geometry(c)
    inner = g.interior(1)
    defect = float(np.max(np.abs((g.H - g.Vnu)[inner])))
    if defect >= critical_tol:
        raise CurveError(f"curve is not a critical point: sup|H - Vnu| = {defect:.3e}")
    Lf = g.d2_ds2(f) - g.Vt * g.d_ds(f) + g.A2 * f
    w = _weight(c.points, c.V)
    return float(-np.sum((f * Lf * w * g.ds)[inner]))


# runs -----------------------------------------------------------------------


@dataclass
class CurveRecord:
    t: float
    F: float
    D: float
    sup_dtu: float  # sup |f|
    sup_Du: float  # sup |A|; curves carry no graph gradient
    min_H_minus_betaVnu: float
    min_pinch_eig: float
    cumulative_dissipation: float
    min_H: float
    min_Vnu: float
    sup_B2: float
    min_a11: float = float("nan")

    def row(self):
        return [getattr(self, c) for c in CURVE_COLUMNS]


@dataclass
class CurveRunSpec:
    state: CurveState
    t_end: float
    dt: float | None = None  # None: cfl * min segment^2, recomputed each step
    cfl: float = 0.25
    record_interval: float = 0.05
    beta: float = 1.0
    lam: float | None = None
    fixed_endpoints: bool = True
    redistribute: bool = False
    keep_states: bool = False
    max_steps: int | None = None


@dataclass
class CurveRunResult:
    records: list[CurveRecord]
    state: CurveState
    status: str  # t_end_reached | self_intersection
    steps: int
    max_energy_increase: float
    states: list[CurveState] = field(default_factory=list)


def _dissipation(g, w):
    return float(np.sum(g.f**2 * w * g.ds))


def _curve_record(c, g, F, D, cum, spec):
    lam = spec.beta if spec.lam is None else spec.lam
    den = spec.beta * g.Vnu - g.H
    sup_B2 = float(np.max(((g.a11 + lam * g.Vnu) / den) ** 2)) if np.all(den > 0) else float("nan")
    return CurveRecord(
        t=c.t,
        F=F,
        D=D,
        sup_dtu=float(np.max(np.abs(g.f))),
        sup_Du=float(np.max(np.abs(g.a11))),
        min_H_minus_betaVnu=float(den.min()),
        min_pinch_eig=float((g.a11 + spec.beta * g.Vnu).min()),
        cumulative_dissipation=cum,
        min_H=float(g.H.min()),
        min_Vnu=float(g.Vnu.min()),
        sup_B2=sup_B2,
        min_a11=float(g.a11.min()),
    )


def run_curve(spec: CurveRunSpec) -> CurveRunResult:
    """Explicit normal flow up to ``t_end``; records land exactly on the
    multiples of ``record_interval``."""
    c = spec.state
    if c.closed and not is_simple(c.points, True):
        raise CurveError("closed curve is not simple")
    records, states = [], []
    g = curve_geometry(c)
    w = _weight(c.points, c.V)
    F = float(np.sum(w * g.ds))
    D = _dissipation(g, w)
    cum = 0.0
    k = 0
    max_inc = -np.inf
    status = "t_end_reached"
    next_record = c.t
    while True:
        at_record = c.t >= next_record - 1e-12
        done = c.t >= spec.t_end - 1e-12 or (spec.max_steps is not None and k >= spec.max_steps)
        if at_record or done:
            records.append(_curve_record(c, g, F, D, cum, spec))
            if spec.keep_states:
                states.append(c)
            if c.closed and not is_simple(c.points, True):
                status = "self_intersection"
                break
            while next_record <= c.t + 1e-12:
                next_record += spec.record_interval
        if done:
            break
        limit = curve_cfl_limit(c, spec.cfl)
        dt = limit if spec.dt is None else spec.dt
        dt = min(dt, next_record - c.t, spec.t_end - c.t)
        new = c.points + dt * g.f[:, None] * g.nu
        if not c.closed and spec.fixed_endpoints:
            new[0], new[-1] = c.points[0], c.points[-1]
        if not np.all(np.isfinite(new)):
            raise BlowUpError(int(np.argwhere(~np.isfinite(new))[0, 0]), c.t + dt)
        if dt > limit * (1 + 1e-12):
            raise CFLError(dt, limit)
        c = c.with_points(new, c.t + dt)
        if spec.redistribute:
            c = redistribute(c)
        k += 1
        g = curve_geometry(c)
        w = _weight(c.points, c.V)
        F_new = float(np.sum(w * g.ds))
        D_new = _dissipation(g, w)
        max_inc = max(max_inc, F_new - F)
        cum += 0.5 * dt * (D + D_new)
        F, D = F_new, D_new
    return CurveRunResult(records, c, status, k, max_inc, states)


def write_curve_csv(path, c: CurveState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(c.points):
            w.writerow([i, format(x, ".17g"), format(y, ".17g")])


def read_curve_csv(path, closed, t=0.0, V=(0.0, -1.0)) -> CurveState:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return CurveState(data[:, 1:3], closed, t, V)


def write_curve_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in records:
            w.writerow([format(x, ".17g") for x in r.row()])
