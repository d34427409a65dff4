"""Parking-space occupancy classification with quadrilateral region pooling."""

__version__ = "0.1.0"

from .errors import (
    DegenerateGeometryError,
    GenerationError,
    ImageLoadError,
    InvalidParameterError,
    ManifestError,
)
from .geometry import Quadrilateral
from .imaging import ImageBuffer, read_ppm, write_ppm
from .pipeline import PatchModelConfig, PyramidModelConfig, infer, train_model
from .pooling import PoolingMethod, pool, pool_quadrilateral, pool_square

__all__ = [
    "DegenerateGeometryError",
    "GenerationError",
    "ImageBuffer",
    "ImageLoadError",
    "InvalidParameterError",
    "ManifestError",
    "PatchModelConfig",
    "PoolingMethod",
    "PyramidModelConfig",
    "Quadrilateral",
    "infer",
    "pool",
    "pool_quadrilateral",
    "pool_square",
    "read_ppm",
    "train_model",
    "write_ppm",
]
