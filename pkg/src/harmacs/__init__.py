"""Harmonic almost complex structures: pointwise algebra, grid operators,
energy-decreasing flow and diagnostics."""

from ._validation import (
    ChartOutOfRangeError,
    ChiralityError,
    DegenerateScaleError,
    DivergenceError,
    DomainError,
    HarmacsError,
    InternalError,
    InvalidInputError,
    NotReducibleError,
    StepFailure,
    UnsupportedMetricError,
)
from .field import AcsField, Grid, energy, energy_density, harmonic_residual, rough_laplacian
from .flow import FlowConfig, FlowState, flow_step, projected_gradient_step, run_flow
from .geometry import MetricField, conformal, euclidean, sphere_stereographic
from .matalg import (
    MetricAtPoint,
    cayley_chart,
    cayley_chart_inv,
    compatible_projection,
    homotopy_path,
    random_acs,
    standard_acs,
    tangent_projection,
)

__version__ = "0.1.0"
