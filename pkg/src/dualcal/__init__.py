"""Dual isotonic calibration driven by proximity-based conformal stratification."""

from .conformal import ConformalConfig, build_index, stratify
from .data_model import SplitSpec, entropies, mean_over_passes, normalized_entropy, renormalize
from .dual import DualCalibrator, PipelineOutput
from .errors import ConfigError, DomainError, DualcalError, ParseError, ValidationError
from .isotonic import IsotonicModel, MulticlassCalibrator, fit_standard, fit_underconfident, pava_fit

__version__ = "0.1.0"

__all__ = [
    "ConformalConfig",
    "ConfigError",
    "DomainError",
    "DualCalibrator",
    "DualcalError",
    "IsotonicModel",
    "MulticlassCalibrator",
    "ParseError",
    "PipelineOutput",
    "SplitSpec",
    "ValidationError",
    "build_index",
    "entropies",
    "fit_standard",
    "fit_underconfident",
    "mean_over_passes",
    "normalized_entropy",
    "pava_fit",
    "renormalize",
    "stratify",
]
