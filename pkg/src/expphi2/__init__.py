"""Spectral simulator and identity checks for the exponential-interaction model on a 2D torus."""

from .fields import GridSpec, make_grid
from .gff import ModelParams

__version__ = "0.1.0"
__all__ = ["GridSpec", "ModelParams", "make_grid"]
