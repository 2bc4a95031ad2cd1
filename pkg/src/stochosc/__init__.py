"""Stochastic parametric oscillators in a white-noise bath: kinetic PDE, Langevin ensembles and derived observables."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import ArtifactIOError, ConfigError, NumericalError  # noqa: E402
from .grids import ComplexGrid, DensityGrid, GridSpec  # noqa: E402
from .model import DimensionlessParams, FrequencyProfile, ModelParams, constant_params, scale  # noqa: E402

__all__ = [
    "__version__", "ArtifactIOError", "ConfigError", "NumericalError", "ComplexGrid", "DensityGrid", "GridSpec",
    "DimensionlessParams", "FrequencyProfile", "ModelParams", "constant_params", "scale",
]
