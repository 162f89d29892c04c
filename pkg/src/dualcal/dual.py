"""Dual isotonic calibration: fit on stratified calibration data, route at inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import isotonic
from .conformal import ConformalConfig, NeighborIndex, StratificationFlags, flag_array, stratify
from .data_model import (
    as_features,
    as_labels,
    as_probs,
    entropies,
    mean_over_passes,
    predicted_labels,
    renormalize,
)
from .errors import ConfigError, DomainError, ValidationError

log = logging.getLogger(__name__)

FALLBACK_WARNING = (
    "no putatively incorrect calibration samples; underconfident branch "
    "fitted with beta=1 on the whole calibration set"
)


@dataclass(frozen=True)
class DualCalibrator:
    standard: isotonic.MulticlassCalibrator
    underconfident: isotonic.MulticlassCalibrator
    config: ConformalConfig
    beta: float
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.standard.n_classes != self.underconfident.n_classes:
            raise ValidationError("standard and underconfident calibrators disagree on C")
        if self.standard.mode != isotonic.STANDARD or self.underconfident.mode != isotonic.UNDERCONFIDENT:
            raise ValidationError("calibrator modes are mixed up")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")
        fallback = FALLBACK_WARNING in self.warnings
        if not fallback and self.underconfident.beta != self.beta:
            raise ValidationError(
                f"underconfident calibrator beta {self.underconfident.beta} does not match {self.beta}"
            )

    @property
    def n_classes(self) -> int:
        return self.standard.n_classes

    def to_dict(self) -> dict:
        return {
            "method": "dual",
            "beta": self.beta,
            "k": self.config.k,
            "alpha": self.config.alpha,
            "warnings": list(self.warnings),
            "standard": self.standard.to_dict(),
            "underconfident": self.underconfident.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DualCalibrator":
        return cls(
            standard=isotonic.MulticlassCalibrator.from_dict(d["standard"]),
            underconfident=isotonic.MulticlassCalibrator.from_dict(d["underconfident"]),
            config=ConformalConfig(k=int(d["k"]), alpha=float(d["alpha"])),
            beta=float(d["beta"]),
            warnings=tuple(d.get("warnings", ())),
        )


@dataclass(frozen=True)
class PipelineOutput:
    calibrated: np.ndarray
    entropies: np.ndarray
    flags: StratificationFlags
    predicted_labels: np.ndarray


def fit(cal_probs, cal_labels, cal_flags: StratificationFlags, beta: float,
        config: ConformalConfig | None = None) -> DualCalibrator:
    """Fit the standard branch on flagged-correct rows, the underconfident one on the rest.

    With no flagged-incorrect rows the underconfident branch falls back to a
    beta=1 fit on all rows and the calibrator records a warning.
    """
    probs = as_probs(cal_probs)
    labels = as_labels(cal_labels, probs.shape[1])
    flags = flag_array(cal_flags)
    if not (flags.shape[0] == labels.shape[0] == probs.shape[0]):
        raise DomainError("calibration probabilities, labels and flags differ in length")
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if not flags.any():
        raise ConfigError("no putatively correct calibration samples; the standard calibrator cannot be fitted")

    warnings: list[str] = []
    standard = isotonic.fit_standard(probs[flags], labels[flags])
    if (~flags).sum() >= 2:
        under = isotonic.fit_underconfident(probs[~flags], beta)
    else:
        log.warning(FALLBACK_WARNING)
        warnings.append(FALLBACK_WARNING)
        under = isotonic.fit_underconfident(probs, 1.0)
    return DualCalibrator(
        standard=standard,
        underconfident=under,
        config=config or ConformalConfig(),
        beta=float(beta),
        warnings=tuple(warnings),
    )


def apply(cal: DualCalibrator, probs, flags) -> np.ndarray:
    """Route each row through the branch its flag selects, then renormalize."""
    probs = np.asarray(probs, dtype=float)
    flags = flag_array(flags)
    if probs.ndim != 2 or probs.shape[1] != cal.n_classes:
        raise DomainError(f"calibrator expects {cal.n_classes} columns, got shape {probs.shape}")
    if flags.shape[0] != probs.shape[0]:
        raise DomainError(f"{flags.shape[0]} flags for {probs.shape[0]} rows")
    out = np.empty_like(probs)
    out[flags] = isotonic.apply(cal.standard, probs[flags])
    out[~flags] = isotonic.apply(cal.underconfident, probs[~flags])
    return renormalize(out)


def infer(cal: DualCalibrator, index: NeighborIndex, test_features, test_stack) -> PipelineOutput:
    """Mean over passes, stratify, route, renormalize, then score entropy.

    Predicted labels come from the pre-calibration mean and are never
    revised; test labels are not an input.
    """
    features = as_features(test_features)
    mean = mean_over_passes(test_stack)
    if mean.shape[0] != features.shape[0]:
        raise DomainError(f"{features.shape[0]} feature rows for {mean.shape[0]} prediction rows")
    predicted = predicted_labels(mean)
    flags = stratify(index, features, mean, predicted, cal.config)
    calibrated = apply(cal, mean, flags)
    return PipelineOutput(
        calibrated=calibrated,
        entropies=entropies(calibrated),
        flags=flags,
        predicted_labels=predicted,
    )
