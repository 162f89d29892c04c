"""Weighted isotonic regression (PAVA) and one-vs-rest multiclass calibrators.

A fitted :class:`IsotonicModel` is a right-continuous step function. Block
``i`` covers the scores in ``[boundaries[i-1], boundaries[i])``, where each
boundary sits halfway between the last training score of one block and the
first training score of the next. Queries outside the training range fall
into the first or last block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import as_labels, as_probs, renormalize
from .errors import DomainError, ValidationError

STANDARD = "standard"
UNDERCONFIDENT = "underconfident"


@dataclass(frozen=True)
class IsotonicModel:
    boundaries: tuple[float, ...]
    block_values: tuple[float, ...]
    training_range: tuple[float, float]

    def __post_init__(self):
        if len(self.block_values) != len(self.boundaries) + 1:
            raise ValidationError(
                f"{len(self.block_values)} block values need {len(self.block_values) - 1} "
                f"boundaries, got {len(self.boundaries)}"
            )
        b = np.asarray(self.boundaries, dtype=float)
        if b.size and not np.all(np.diff(b) > 0):
            raise ValidationError("boundaries must be strictly increasing")
        v = np.asarray(self.block_values, dtype=float)
        if not np.all(np.diff(v) >= 0):
            raise ValidationError("block values must be non-decreasing")

    def predict(self, scores):
        """Step lookup for a scalar or an array of scores."""
        idx = np.searchsorted(np.asarray(self.boundaries, dtype=float), scores, side="right")
        out = np.asarray(self.block_values, dtype=float)[idx]
        return float(out) if np.ndim(out) == 0 else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "block_values": list(self.block_values),
            "training_range": list(self.training_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsotonicModel":
        return cls(
            boundaries=tuple(float(x) for x in d["boundaries"]),
            block_values=tuple(float(x) for x in d["block_values"]),
            training_range=tuple(float(x) for x in d["training_range"]),
        )


def predict(model: IsotonicModel, score):
    return model.predict(score)


def _merge_duplicates(scores, targets, weights):
    order = np.argsort(scores, kind="stable")
    s, y, w = scores[order], targets[order], weights[order]
    uniq, first = np.unique(s, return_index=True)
    wsum = np.add.reduceat(w, first)
    ysum = np.add.reduceat(w * y, first)
    return uniq, ysum / wsum, wsum


def pava_fit(scores, targets, weights=None) -> IsotonicModel:
    """Fit a non-decreasing step function minimising sum w_i (target_i - r_i)^2.

    Points sharing a score are first merged into one point carrying their
    total weight and weighted mean target, so the result does not depend on
    input order.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    weights = np.ones_like(scores) if weights is None else np.asarray(weights, dtype=float).ravel()
    if scores.size == 0:
        raise DomainError("pava_fit needs at least one point")
    if not (scores.size == targets.size == weights.size):
        raise DomainError(
            f"scores, targets and weights differ in length: {scores.size}, {targets.size}, {weights.size}"
        )
    if np.isnan(scores).any() or np.isnan(targets).any():
        raise DomainError("NaN score or target")
    if not np.all(np.isfinite(targets)):
        raise DomainError("targets must be finite")
    if not np.all(weights > 0):
        raise DomainError("weights must be positive")

    xs, ys, ws = _merge_duplicates(scores, targets, weights)

    # Each block: [weighted sum, weight, first index, last index]
    blocks: list[list] = []
    for i in range(xs.size):
        blocks.append([ys[i] * ws[i], ws[i], i, i])
        # equal neighbours merge too, so every block boundary is a real step
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] >= blocks[-1][0] / blocks[-1][1]:
            s, w, _, last = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += w
            blocks[-1][3] = last

    values = [s / w for s, w, _, _ in blocks]
    boundaries = [0.5 * (xs[a[3]] + xs[b[2]]) for a, b in zip(blocks, blocks[1:])]
    return IsotonicModel(
        boundaries=tuple(float(b) for b in boundaries),
        block_values=tuple(float(v) for v in values),
        training_range=(float(xs[0]), float(xs[-1])),
    )


def pava_objective(model: IsotonicModel, scores, targets, weights=None) -> float:
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=float)
    w = np.ones_like(scores) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w * (targets - model.predict(scores)) ** 2))


def underconfidence_targets(probs, beta: float, n_classes: int):
    """Mix probabilities with the uniform distribution: beta * p + (1 - beta) / C."""
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if n_classes < 1:
        raise DomainError(f"C must be positive, got {n_classes}")
    return beta * np.asarray(probs, dtype=float) + (1.0 - beta) / n_classes


@dataclass(frozen=True)
class MulticlassCalibrator:
    models: tuple[IsotonicModel, ...]
    mode: str = STANDARD
    beta: float | None = None
    n_classes: int = field(default=0)

    def __post_init__(self):
        if self.n_classes == 0:
            object.__setattr__(self, "n_classes", len(self.models))
        if len(self.models) != self.n_classes:
            raise ValidationError(f"expected {self.n_classes} per-class models, got {len(self.models)}")
        if self.mode not in (STANDARD, UNDERCONFIDENT):
            raise ValidationError(f"unknown calibrator mode {self.mode!r}")
        if self.mode == UNDERCONFIDENT:
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValidationError(f"underconfident calibrator needs beta in [0, 1], got {self.beta}")
        elif self.beta is not None:
            raise ValidationError("standard calibrator carries no beta")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "beta": self.beta,
            "classes": self.n_classes,
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MulticlassCalibrator":
        return cls(
            models=tuple(IsotonicModel.from_dict(m) for m in d["models"]),
            mode=d["mode"],
            beta=None if d.get("beta") is None else float(d["beta"]),
            n_classes=int(d["classes"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MulticlassCalibrator":
        return cls.from_dict(json.loads(text))


def _check_fit_input(probs):
    probs = as_probs(probs)
    if probs.shape[0] < 2:
        raise DomainError(f"calibration needs N >= 2 samples, got {probs.shape[0]}")
    return probs


def fit_standard(probs, labels) -> MulticlassCalibrator:
    """One-vs-rest isotonic fit against true-label indicator targets."""
    probs = _check_fit_input(probs)
    n, c = probs.shape
    labels = as_labels(labels, c)
    if labels.size != n:
        raise DomainError(f"{labels.size} labels for {n} probability rows")
    models = tuple(pava_fit(probs[:, k], (labels == k).astype(float)) for k in range(c))
    return MulticlassCalibrator(models=models, mode=STANDARD, n_classes=c)


def fit_underconfident(probs, beta: float) -> MulticlassCalibrator:
    """One-vs-rest isotonic fit against targets pulled toward 1/C.

    Labels play no part in the fit, so none are accepted.
    """
    probs = _check_fit_input(probs)
    c = probs.shape[1]
    models = tuple(
        pava_fit(probs[:, k], underconfidence_targets(probs[:, k], beta, c)) for k in range(c)
    )
    return MulticlassCalibrator(models=models, mode=UNDERCONFIDENT, beta=float(beta), n_classes=c)


def apply(cal: MulticlassCalibrator, probs) -> np.ndarray:
    """Transform each class column with its model, then renormalize the rows."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != cal.n_classes:
        raise DomainError(f"calibrator expects {cal.n_classes} columns, got shape {probs.shape}")
    if probs.shape[0] == 0:
        return renormalize(probs)
    cols = np.column_stack([m.predict(probs[:, k]) for k, m in enumerate(cal.models)])
    return renormalize(np.maximum(cols, 0.0))

