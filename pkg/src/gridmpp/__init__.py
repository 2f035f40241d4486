"""Labeled multi-robot path planning on fully occupied grids."""

from .grid_core import (
    Configuration,
    GridSpec,
    Instance,
    ModelViolation,
    Plan,
    Step,
    validate_plan,
)

__all__ = ["Configuration", "GridSpec", "Instance", "ModelViolation", "Plan", "Step",
           "validate_plan"]
__version__ = "0.1.0"
