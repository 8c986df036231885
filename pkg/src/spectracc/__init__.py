"""Spectral-guided color correction.

Renders RGB / multispectral / XYZ triplets from reflectance cubes, corrects
camera RGB with a classic AWB + CST pipeline or a small dual-input KAN, and
scores results with CIEDE2000 and reproduction error.
"""

from .errors import (ConfigError, DataError, DegenerateEstimateError, FormatError, GridMismatchError,
                     NumericalError, RankDeficientError, SpectraccError, TruncationError)
from .spectral import (DEFAULT_GRID, PlanarImage, ReflectanceCube, SensitivitySet, Spectrum, WavelengthGrid,
                       render_image)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DegenerateEstimateError", "FormatError", "GridMismatchError",
    "NumericalError", "RankDeficientError", "SpectraccError", "TruncationError",
    "DEFAULT_GRID", "PlanarImage", "ReflectanceCube", "SensitivitySet", "Spectrum", "WavelengthGrid",
    "render_image", "__version__",
]
