"""Driving perception toolkit: a classical lane detector and small from-scratch CNNs."""

from .errors import (
    BoundsError,
    DimensionError,
    DrivePercError,
    FormatError,
    ParameterError,
    StageError,
    UnsupportedFormatError,
    UnsupportedVersionError,
)
from .imaging import Image, read_image, write_image
from .lanes import PipelineConfig, run_pipeline
from .tensor_core import Prng

__version__ = "0.1.0"
