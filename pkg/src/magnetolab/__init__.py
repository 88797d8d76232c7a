"""Numerical toolkit for magnetic geodesic flows on closed and model surfaces."""

from ._accel import backend
from .geometry import FunctionSpec, MagneticSystem, OneFormSpec, PhasePoint, SurfaceModel

__version__ = "0.1.0"

__all__ = [
    "FunctionSpec",
    "MagneticSystem",
    "OneFormSpec",
    "PhasePoint",
    "SurfaceModel",
    "backend",
]
