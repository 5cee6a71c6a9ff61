"""Computational tools for optimal and congested transport on the Heisenberg group."""

from . import congestion, density, geodesy, hgroup, otcore
from .hgroup import ModelDims

__version__ = "0.1.0"

__all__ = ["hgroup", "geodesy", "otcore", "density", "congestion", "ModelDims", "__version__"]
