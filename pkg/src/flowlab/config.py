"""Run specifications: strict TOML documents validated into a RunSpec.

Example::

    mode = "graph-run"
    [grid]
    dim = 1
    extents = [[-1.0, 1.0]]
    nodes = [101]
    [initial]
    profile = "grim-reaper"
    boundary = "initial"      # Dirichlet data taken from the initial profile
    interpolate = true        # start from the linear interpolant of that data
    [flow]
    t_end = 20.0

Unknown keys are rejected so typos never pass silently.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import tomli

MODES = ("graph-run", "curve-run", "bowl", "stationary", "check-invariants")
PROFILES = ("zero", "paraboloid", "grim-reaper", "bowl", "sine", "snapshot")
BOUNDARY_SELECTORS = ("initial", "zero", "grim-reaper", "bowl")
DT_POLICIES = ("explicit-cfl", "fixed")
SHAPES = ("circle", "ellipse", "grim-reaper", "segment")


class SpecError(ValueError):
    """Malformed or invalid run specification.

    ``line`` is set for syntax errors, ``field`` for validation errors.
    """

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


@dataclass
class GridSpec:
    dim: int = 1
    extents: list = field(default_factory=lambda: [[-1.0, 1.0]])
    nodes: list = field(default_factory=lambda: [101])
    boundary: str = "dirichlet"


@dataclass
class InitialSpec:
    profile: str = "zero"
    lam: float = 1.0
    epsilon: float = 0.1
    path: str | None = None
    boundary: str = "initial"
    interpolate: bool = False
    noise: float = 0.0
    shift: float = 0.0


@dataclass
class FlowSpec:
    t_end: float | None = None
    dt_policy: str = "explicit-cfl"
    dt: float | None = None
    tol_stationary: float = 1e-5
    record_interval: float = 0.1
    beta: float = 1.0
    beta1: float | None = None
    lam: float | None = None
    scheme: str = "variational"
    stepping: str = "explicit"
    snapshots: bool = False


@dataclass
class CurveSpec:
    shape: str = "ellipse"
    points: int = 256
    radius: float = 1.0
    a: float = 2.0
    b: float = 1.0
    x_range: list = field(default_factory=lambda: [-1.0, 1.0])
    V: list = field(default_factory=lambda: [0.0, -1.0])
    cfl: float = 0.25
    fixed_endpoints: bool = True
    redistribute: bool = False


@dataclass
class BowlSpec:
    n: int = 2
    r_max: float = 4.0
    h: float = 1e-3


@dataclass
class SolverSpec:
    tol: float = 1e-10
    max_iters: int = 50


@dataclass
class RunSpec:
    mode: str
    grid: GridSpec = field(default_factory=GridSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    curve: CurveSpec = field(default_factory=CurveSpec)
    bowl: BowlSpec = field(default_factory=BowlSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    seed: int = 0
    output_dir: str | None = None

    def to_dict(self):
        return asdict(self)


# TOML key -> dataclass attribute, where they differ
_RENAMES = {"lambda": "lam"}
_SECTIONS = {
    "grid": GridSpec,
    "initial": InitialSpec,
    "flow": FlowSpec,
    "curve": CurveSpec,
    "bowl": BowlSpec,
    "solver": SolverSpec,
}
_TOP_LEVEL = ("mode", "seed", "output_dir")


def _build(cls, table, section):
    known = {f for f in cls.__dataclass_fields__}
    kwargs = {}
    for key, value in table.items():
        attr = _RENAMES.get(key, key)
        if attr not in known:
            raise SpecError(f"unknown key {key!r} in [{section}]", field=f"{section}.{key}")
        kwargs[attr] = value
    return cls(**kwargs)


def parse_spec(text: str) -> RunSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise SpecError(f"spec parse error: {exc}", line=line) from exc
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise SpecError(f"{key!r} must be a table", field=key)
        elif key not in _TOP_LEVEL:
            raise SpecError(f"unknown key {key!r}", field=key)
    if "mode" not in doc:
        raise SpecError("missing required key 'mode'", field="mode")
    spec = RunSpec(
        mode=doc["mode"],
        seed=doc.get("seed", 0),
        output_dir=doc.get("output_dir"),
        **{name: _build(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()},
    )
    validate(spec)
    return spec


def _positive(value, name):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value) or value <= 0:
        raise SpecError(f"{name} must be a positive number, got {value!r}", field=name)


def _choice(value, options, name):
    if value not in options:
        raise SpecError(f"{name} must be one of {options}, got {value!r}", field=name)


def validate(spec: RunSpec) -> None:
    _choice(spec.mode, MODES, "mode")
    if not isinstance(spec.seed, int) or isinstance(spec.seed, bool):
        raise SpecError("seed must be an integer", field="seed")
    g = spec.grid
    if g.dim not in (1, 2):
        raise SpecError("grid.dim must be 1 or 2", field="grid.dim")
    if len(g.extents) != g.dim or len(g.nodes) != g.dim:
        raise SpecError("grid.extents and grid.nodes need one entry per dimension", field="grid.extents")
    for ext in g.extents:
        if len(ext) != 2 or not ext[1] > ext[0]:
            raise SpecError(f"grid.extents entry {ext!r} is not an interval", field="grid.extents")
    for n in g.nodes:
        if not isinstance(n, int) or n < 3:
            raise SpecError("grid.nodes entries must be integers >= 3", field="grid.nodes")
    _choice(g.boundary, ("dirichlet", "periodic"), "grid.boundary")

    ini = spec.initial
    _choice(ini.profile, PROFILES, "initial.profile")
    _choice(ini.boundary, BOUNDARY_SELECTORS, "initial.boundary")
    if ini.profile == "snapshot" and not ini.path:
        raise SpecError("initial.path is required for the snapshot profile", field="initial.path")
    if ini.profile == "grim-reaper" and g.dim != 1:
        raise SpecError("the grim-reaper profile needs grid.dim = 1", field="initial.profile")
    if ini.profile == "bowl" and g.dim != 2:
        raise SpecError("the bowl profile needs grid.dim = 2", field="initial.profile")
    if ini.noise < 0:
        raise SpecError("initial.noise must be >= 0", field="initial.noise")

    fl = spec.flow
    _choice(fl.dt_policy, DT_POLICIES, "flow.dt_policy")
    _choice(fl.scheme, ("variational", "flux"), "flow.scheme")
    _choice(fl.stepping, ("explicit", "semi-implicit"), "flow.stepping")
    _positive(fl.tol_stationary, "flow.tol_stationary")
    _positive(fl.record_interval, "flow.record_interval")
    if fl.dt_policy == "fixed":
        if fl.dt is None:
            raise SpecError("flow.dt is required when dt_policy = 'fixed'", field="flow.dt")
        _positive(fl.dt, "flow.dt")
    if spec.mode in ("graph-run", "curve-run"):
        if fl.t_end is None:
            raise SpecError("flow.t_end is required", field="flow.t_end")
        _positive(fl.t_end, "flow.t_end")

    cu = spec.curve
    _choice(cu.shape, SHAPES, "curve.shape")
    if not isinstance(cu.points, int) or cu.points < 8:
        raise SpecError("curve.points must be an integer >= 8", field="curve.points")
    for name in ("radius", "a", "b", "cfl"):
        _positive(getattr(cu, name), f"curve.{name}")
    if len(cu.V) != 2:
        raise SpecError("curve.V must have two components", field="curve.V")

    bw = spec.bowl
    if not isinstance(bw.n, int) or bw.n < 2:
        raise SpecError("bowl.n must be an integer >= 2", field="bowl.n")
    _positive(bw.r_max, "bowl.r_max")
    _positive(bw.h, "bowl.h")

    _positive(spec.solver.tol, "solver.tol")
    if spec.mode == "stationary" and g.boundary != "dirichlet":
        raise SpecError("stationary mode needs a dirichlet grid", field="grid.boundary")


def load_spec(path) -> RunSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())
