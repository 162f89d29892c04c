"""In-memory runs of the three calibration modes on one set of splits.

Used by the ``ablate`` subcommand and by multi-seed studies; the on-disk
subcommands go through the same functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual, isotonic
from .conformal import ConformalConfig, StratificationFlags, build_index, stratification_report, stratify
from .data_model import entropies, mean_over_passes, predicted_labels
from .metrics import DEFAULT_BINS, DEFAULT_TAUS, evaluate
from .synth import SplitData

MODES = ("none", "isotonic", "dual")


@dataclass(frozen=True)
class ModeResult:
    mode: str
    probs: np.ndarray
    entropies: np.ndarray
    predicted: np.ndarray  # pre-calibration argmax
    flags: StratificationFlags | None
    warnings: tuple[str, ...] = ()


def run_mode(mode: str, conformal: SplitData, calibration: SplitData, test: SplitData,
             config: ConformalConfig, beta: float) -> ModeResult:
    """Fit ``mode`` on the calibration split and apply it to the test split."""
    test_mean = mean_over_passes(test.stack)
    predicted = predicted_labels(test_mean)
    if mode == "none":
        return ModeResult(mode, test_mean, entropies(test_mean), predicted, None)
    cal_mean = mean_over_passes(calibration.stack)
    if mode == "isotonic":
        cal = isotonic.fit_standard(cal_mean, calibration.labels)
        probs = isotonic.apply(cal, test_mean)
        return ModeResult(mode, probs, entropies(probs), predicted, None)
    if mode == "dual":
        index = build_index(conformal.features, conformal.labels, mean_over_passes(conformal.stack))
        cal_flags = stratify(index, calibration.features, cal_mean, None, config)
        cal = dual.fit(cal_mean, calibration.labels, cal_flags, beta, config)
        out = dual.infer(cal, index, test.features, test.stack)
        return ModeResult(mode, out.calibrated, out.entropies, out.predicted_labels, out.flags, cal.warnings)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def summarize(result: ModeResult, labels, n_bins: int = DEFAULT_BINS, taus=DEFAULT_TAUS) -> dict:
    """Metrics for one mode plus the mean entropy of truly incorrect predictions."""
    report = evaluate(result.probs, labels, result.entropies, n_bins, taus)
    wrong = result.predicted != np.asarray(labels)
    report["incorrect_entropy"] = float(result.entropies[wrong].mean()) if wrong.any() else float("nan")
    report["argmax_agreement"] = float(np.mean(result.predicted == predicted_labels(result.probs)))
    if result.flags is not None:
        report["stratification"] = stratification_report(result.flags, ~wrong).to_dict()
    return report


def run_all(splits: dict[str, SplitData], config: ConformalConfig, beta: float,
            modes=MODES, n_bins: int = DEFAULT_BINS, taus=DEFAULT_TAUS) -> dict[str, dict]:
    out = {}
    for mode in modes:
        res = run_mode(mode, splits["conformal"], splits["calibration"], splits["test"], config, beta)
        out[mode] = summarize(res, splits["test"].labels, n_bins, taus)
    return out


def at_tau(report: dict, tau: float) -> dict:
    for row in report["uncertainty"]:
        if abs(row["tau"] - tau) < 1e-12:
            return row
    raise KeyError(f"tau={tau} not in report")
