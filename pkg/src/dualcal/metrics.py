"""Calibration metrics, classification scores and the uncertainty-aware confusion battery.

All scores are fractions; rates with a zero denominator come back as NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import as_labels, entropies, predicted_labels
from .errors import DomainError

DEFAULT_BINS = 15
DEFAULT_TAUS = (0.2, 0.3, 0.4, 0.5, 0.6)


@dataclass(frozen=True)
class ReliabilityBins:
    """Equal-width confidence bins on [0, 1]; the last bin is closed at 1."""

    edges: np.ndarray
    counts: np.ndarray
    confidence: np.ndarray  # NaN for empty bins
    accuracy: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        for m in range(self.n_bins):
            yield self.edges[m], self.edges[m + 1], self.confidence[m], self.accuracy[m], int(self.counts[m])


def _confidence_and_correctness(probs, labels):
    probs = np.asarray(probs, dtype=float)
    labels = as_labels(labels, probs.shape[1])
    if labels.shape[0] != probs.shape[0]:
        raise DomainError(f"{labels.shape[0]} labels for {probs.shape[0]} rows")
    return probs.max(axis=1), predicted_labels(probs) == labels


def bins_from_confidence(confidence, correct, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    if n_bins < 1:
        raise DomainError(f"need at least one bin, got {n_bins}")
    confidence = np.asarray(confidence, dtype=float)
    correct = np.asarray(correct, dtype=float)
    which = np.clip(np.floor(confidence * n_bins).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    conf_sum = np.bincount(which, weights=confidence, minlength=n_bins)
    acc_sum = np.bincount(which, weights=correct, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(counts > 0, conf_sum / counts, np.nan)
        acc = np.where(counts > 0, acc_sum / counts, np.nan)
    return ReliabilityBins(np.linspace(0.0, 1.0, n_bins + 1), counts, conf, acc)


def reliability_bins(probs, labels, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    """Bin samples by top-1 confidence; a sample is correct when argmax == label."""
    conf, correct = _confidence_and_correctness(probs, labels)
    return bins_from_confidence(conf, correct, n_bins)


def ece(bins: ReliabilityBins) -> float:
    n = bins.n_samples
    if n == 0:
        raise DomainError("ECE of zero samples")
    occupied = bins.counts > 0
    gaps = np.abs(bins.accuracy[occupied] - bins.confidence[occupied])
    return float(np.sum(bins.counts[occupied] * gaps) / n)


def mce(bins: ReliabilityBins) -> float:
    occupied = bins.counts > 0
    if not occupied.any():
        raise DomainError("MCE with every bin empty")
    return float(np.max(np.abs(bins.accuracy[occupied] - bins.confidence[occupied])))


def brier(probs, labels) -> float:
    probs = np.asarray(probs, dtype=float)
    labels = as_labels(labels, probs.shape[1])
    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.size), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def classification_scores(probs, labels, n_classes: int | None = None) -> tuple[float, float]:
    """Accuracy and macro-F1 of argmax predictions.

    Every class in ``range(C)`` counts toward the macro average, including
    classes that appear in neither predictions nor labels (their F1 is 0).
    """
    probs = np.asarray(probs, dtype=float)
    c = probs.shape[1] if n_classes is None else n_classes
    labels = as_labels(labels, c)
    pred = predicted_labels(probs)
    accuracy = float(np.mean(pred == labels))
    f1 = np.zeros(c)
    for k in range(c):
        tp = np.sum((pred == k) & (labels == k))
        denom = np.sum(pred == k) + np.sum(labels == k)
        f1[k] = 2.0 * tp / denom if denom else 0.0
    return accuracy, float(f1.mean())


@dataclass(frozen=True)
class UncertaintyConfusion:
    tc: int
    tu: int
    fc: int
    fu: int
    tau: float

    @property
    def n(self) -> int:
        return self.tc + self.tu + self.fc + self.fu


@dataclass(frozen=True)
class UncertaintyScores:
    uacc: float
    utpr: float
    ufpr: float
    ug_mean: float


def uncertainty_confusion(correctness, entropy_values, tau: float) -> UncertaintyConfusion:
    """Split predictions by correctness and by certainty (entropy < tau)."""
    correct = np.asarray(correctness, dtype=bool)
    h = np.asarray(entropy_values, dtype=float)
    if correct.shape != h.shape:
        raise DomainError(f"correctness {correct.shape} and entropies {h.shape} differ in shape")
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [0, 1], got {tau}")
    certain = h < tau
    return UncertaintyConfusion(
        tc=int(np.sum(correct & certain)),
        tu=int(np.sum(~correct & ~certain)),
        fc=int(np.sum(~correct & certain)),
        fu=int(np.sum(correct & ~certain)),
        tau=float(tau),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def uncertainty_scores(conf: UncertaintyConfusion) -> UncertaintyScores:
    if conf.n < 1:
        raise DomainError("uncertainty scores need at least one prediction")
    utpr = _ratio(conf.tc, conf.tc + conf.fu)
    ufpr = _ratio(conf.fc, conf.fc + conf.tu)
    return UncertaintyScores(
        uacc=(conf.tu + conf.tc) / conf.n,
        utpr=utpr,
        ufpr=ufpr,
        ug_mean=math.sqrt(utpr * (1.0 - ufpr)) if not (math.isnan(utpr) or math.isnan(ufpr)) else math.nan,
    )


SWEEP_COLUMNS = ("tau", "uacc", "tc_pct", "tu_pct", "fc_pct", "fu_pct", "utpr", "ufpr", "ug_mean",
                 "tc", "tu", "fc", "fu")


def uncertainty_row(conf: UncertaintyConfusion) -> dict:
    """One flat record: counts, percentages of N, and the four scores."""
    s = uncertainty_scores(conf)
    n = conf.n
    return {
        "tau": conf.tau,
        "uacc": s.uacc,
        "tc_pct": 100.0 * conf.tc / n,
        "tu_pct": 100.0 * conf.tu / n,
        "fc_pct": 100.0 * conf.fc / n,
        "fu_pct": 100.0 * conf.fu / n,
        "utpr": s.utpr,
        "ufpr": s.ufpr,
        "ug_mean": s.ug_mean,
        "tc": conf.tc,
        "tu": conf.tu,
        "fc": conf.fc,
        "fu": conf.fu,
    }


def threshold_sweep(correctness, entropy_values, taus=DEFAULT_TAUS) -> list[dict]:
    taus = [float(t) for t in taus]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise DomainError(f"taus must be sorted ascending, got {taus}")
    return [uncertainty_row(uncertainty_confusion(correctness, entropy_values, t)) for t in taus]


def evaluate(probs, labels, entropy_values=None, n_bins: int = DEFAULT_BINS, taus=DEFAULT_TAUS) -> dict:
    """Every metric for one probability matrix, as a plain dict of fractions."""
    probs = np.asarray(probs, dtype=float)
    labels = as_labels(labels, probs.shape[1])
    h = entropies(probs) if entropy_values is None else np.asarray(entropy_values, dtype=float)
    bins = reliability_bins(probs, labels, n_bins)
    acc, f1 = classification_scores(probs, labels)
    correct = predicted_labels(probs) == labels
    return {
        "n": int(labels.size),
        "accuracy": acc,
        "macro_f1": f1,
        "ece": ece(bins),
        "mce": mce(bins),
        "brier": brier(probs, labels),
        "bins": n_bins,
        "uncertainty": threshold_sweep(correct, h, taus),
    }

