"""Pseudospectral laboratory for geodesic flows on diffeomorphism groups of flat tori."""

__version__ = "0.1.0"

from .spectral import (
    TorusGrid,
    ScalarField,
    VectorField,
    HodgeParts,
    InertiaSpec,
)
from .flowmap import DiffeoMap, FlowIntegratorConfig
from .geodesics import MetricConfig, GeodesicTrajectory, AxisymmetricState
from .regularity import DeformationOperator, RegularityReport
from .shooting import ShootingProblem, ShootingReport

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "HodgeParts",
    "InertiaSpec",
    "DiffeoMap",
    "FlowIntegratorConfig",
    "MetricConfig",
    "GeodesicTrajectory",
    "AxisymmetricState",
    "DeformationOperator",
    "RegularityReport",
    "ShootingProblem",
    "ShootingReport",
    "__version__",
]
