"""Riemannian geometry of the power-flow solution manifold.

The package builds the metric and connection of the solution manifold at
an operating point and uses second-order geodesics to estimate how far
bus voltages can travel along a power-varying direction before the
voltage-stability boundary.  A continuation power flow is included as
the reference oracle.
"""

from .continuation import ContinuationTrace, CpfOptions, cpf_trace, nose_point
from .errors import (
    CaseError,
    ContinuationError,
    GeodesicError,
    GeoflowError,
    PowerFlowError,
)
from .geometry import (
    BoundaryEstimate,
    EstimateStatus,
    GeometryBundle,
    GeodesicSeed,
    GeodesicTrajectory,
    QuadraticCoefficients,
    boundary_estimate,
    build_bundle,
    christoffel_first,
    christoffel_second,
    contravariant_metric,
    covariant_metric,
    geodesic_integrate,
    geodesic_quadratic,
    initial_velocity,
)
from .network import Branch, Bus, BusKind, NetworkModel, build_admittance, load_case, parse_case
from .powerflow import (
    HessianTensor,
    InjectionVector,
    StateVector,
    evaluate_f,
    flat_start,
    hessian,
    jacobian,
    newton_solve,
    scheduled_injection,
    singularity_metric,
)
from .sweep import (
    Direction,
    SweepResult,
    VaryingSpec,
    build_direction,
    calibrate_alpha,
    directions_2d,
    directions_3d,
    gap_statistics,
    sweep_boundary,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "BusKind",
    "BoundaryEstimate",
    "CaseError",
    "ContinuationError",
    "ContinuationTrace",
    "CpfOptions",
    "Direction",
    "EstimateStatus",
    "GeodesicError",
    "GeodesicSeed",
    "GeodesicTrajectory",
    "GeoflowError",
    "GeometryBundle",
    "HessianTensor",
    "InjectionVector",
    "NetworkModel",
    "PowerFlowError",
    "QuadraticCoefficients",
    "StateVector",
    "SweepResult",
    "VaryingSpec",
    "boundary_estimate",
    "build_admittance",
    "build_bundle",
    "build_direction",
    "calibrate_alpha",
    "christoffel_first",
    "christoffel_second",
    "contravariant_metric",
    "covariant_metric",
    "cpf_trace",
    "directions_2d",
    "directions_3d",
    "evaluate_f",
    "flat_start",
    "gap_statistics",
    "geodesic_integrate",
    "geodesic_quadratic",
    "hessian",
    "initial_velocity",
    "jacobian",
    "load_case",
    "newton_solve",
    "nose_point",
    "parse_case",
    "scheduled_injection",
    "singularity_metric",
    "sweep_boundary",
    "__version__",
]
