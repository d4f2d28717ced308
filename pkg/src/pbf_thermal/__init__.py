"""Thermal surrogates for laser powder bed fusion.

Finite-difference reference solver, physics-informed networks, a
path-conditioned operator network and sequential per-track composition,
with a common evaluation suite.
"""

__version__ = "0.1.0"

from .fd import BoundarySpec, FdConfig, Grid, TemperatureField, solve
from .laser import (
    LaserParams,
    Scenario,
    Track,
    Workpiece,
    encode_path,
    enumerate_scenarios,
    heat_source,
    parallel_tracks,
)
from .material import HASTELLOY_X, MaterialParams
from .physics import ThermalProblem

__all__ = [
    "BoundarySpec", "FdConfig", "Grid", "TemperatureField", "solve",
    "LaserParams", "Scenario", "Track", "Workpiece", "encode_path", "enumerate_scenarios", "heat_source",
    "parallel_tracks", "ThermalProblem",
    "HASTELLOY_X", "MaterialParams", "__version__",
]
