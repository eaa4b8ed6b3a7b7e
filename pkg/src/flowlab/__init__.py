"""Numerical laboratory for the translating mean curvature flow.

Graphical flow on rectangles (``graphflow``), translating solitons and a
stationary Newton solver (``soliton``), a parametric curve flow in the plane
(``curveflow``) and the shared grid operators (``grid``).
"""

from .grid import (
    GridError,
    ScalarField,
    StructuredGrid,
    VectorField,
    div_flux,
    gradient,
    integrate,
    read_snapshot,
    write_snapshot,
)
from .graphflow import (
    BlowUpError,
    CFLError,
    FlowRunSpec,
    GraphFlowState,
    dissipation,
    energy,
    graph_geometry,
    pinch_monitors,
    run,
    step,
    tmcf_rhs,
)
from .soliton import (
    NewtonError,
    SolitonProfile,
    barrier_offsets,
    bowl_profile,
    grim_reaper,
    grim_reaper_slope,
    stationary_solve,
)
from .curveflow import (
    CurveState,
    curve_geometry,
    curve_step,
    evolution_residuals,
    first_variation_check,
    jacobi_form,
    curve_pinching_monitors,
    weighted_area,
)

__version__ = "0.1.0"
