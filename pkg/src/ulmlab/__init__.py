"""Simulated matrix-array ultrasound localization microscopy.

Synthesizes RF echoes of point scatterers on a 32 x 32 matrix array,
beamforms them as a full volume (3D), an elevation-summed plane (VIP), an
elevationally focused plane (EF) or the central slice of the volume (CS),
then localizes, accumulates and scores the isolated echoes.
"""

from .config import ConfigError, ExperimentConfig
from .geometry import ImagingScheme, Scheme, VoxelGrid, build_array
from .pipeline import run

__all__ = ["ConfigError", "ExperimentConfig", "ImagingScheme", "Scheme", "VoxelGrid", "build_array", "run"]
__version__ = "0.1.0"
