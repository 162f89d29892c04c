"""Proximity-based conformal stratification.

Every query retrieves its ``k`` nearest conformal-set samples (exact
Euclidean search), takes the ``(1 - alpha)`` order statistic of their
nonconformity scores as a local threshold ``q``, and forms the prediction set
``{c : 1 - p_c <= q}``. A query is flagged putatively correct only when that
set is exactly ``{predicted label}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import as_features, as_labels, as_probs, predicted_labels
from .errors import ConfigError, DomainError, ValidationError

_QUERY_CHUNK = 256


@dataclass(frozen=True)
class ConformalConfig:
    k: int = 20
    alpha: float = 0.01

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")

    def check_against(self, index: "NeighborIndex") -> None:
        if self.k > index.size:
            raise ConfigError(f"k={self.k} exceeds the conformal set size {index.size}")


@dataclass(frozen=True)
class NeighborIndex:
    features: np.ndarray
    labels: np.ndarray
    nonconformity: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if not (self.labels.shape[0] == self.nonconformity.shape[0] == n):
            raise ValidationError("index fields differ in length")
        if n and (self.nonconformity.min() < 0 or self.nonconformity.max() > 1):
            raise ValidationError("nonconformity scores must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class StratificationFlags:
    flags: np.ndarray
    set_sizes: np.ndarray
    quantiles: np.ndarray

    def __post_init__(self):
        if np.any(self.flags & (self.set_sizes != 1)):
            raise ValidationError("a putatively correct sample must have a singleton set")

    def __len__(self) -> int:
        return self.flags.shape[0]

    def subset(self, idx) -> "StratificationFlags":
        return StratificationFlags(self.flags[idx], self.set_sizes[idx], self.quantiles[idx])


def flag_array(flags) -> np.ndarray:
    """Boolean flags from a StratificationFlags or any array-like."""
    if isinstance(flags, StratificationFlags):
        return flags.flags
    return np.asarray(flags, dtype=bool)


def build_index(features, labels, mean_probs) -> NeighborIndex:
    """Index the conformal set with its nonconformity scores ``1 - p_y``."""
    features = as_features(features)
    probs = as_probs(mean_probs)
    labels = as_labels(labels, probs.shape[1])
    n = features.shape[0]
    if labels.shape[0] != n or probs.shape[0] != n:
        raise DomainError(
            f"conformal inputs disagree in length: features {n}, labels {labels.shape[0]}, "
            f"probs {probs.shape[0]}"
        )
    scores = np.clip(1.0 - probs[np.arange(n), labels], 0.0, 1.0)
    scores.flags.writeable = False
    return NeighborIndex(features=features, labels=labels, nonconformity=scores)


def _sq_distances(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - points[None, :, :]
    return np.einsum("qnd,qnd->qn", diff, diff)


def knn_batch(index: NeighborIndex, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-NN for many queries: (indices, distances), each Q x k.

    Neighbours come in ascending distance; equal distances keep the lower
    conformal-set index first.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if k < 1 or k > index.size:
        raise DomainError(f"k={k} must lie in [1, {index.size}]")
    if queries.shape[1] != index.features.shape[1]:
        raise DomainError(
            f"query dimension {queries.shape[1]} does not match index dimension {index.features.shape[1]}"
        )
    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    dist = np.empty((queries.shape[0], k), dtype=float)
    for lo in range(0, queries.shape[0], _QUERY_CHUNK):
        d2 = _sq_distances(index.features, queries[lo:lo + _QUERY_CHUNK])
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[lo:lo + _QUERY_CHUNK] = order
        dist[lo:lo + _QUERY_CHUNK] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def knn(index: NeighborIndex, query, k: int) -> list[tuple[int, float]]:
    idx, dist = knn_batch(index, np.asarray(query, dtype=float)[None, :], k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def quantile_rank(k: int, alpha: float) -> int:
    """1-based order statistic ``ceil((1 - alpha) * k)`` clamped to [1, k]."""
    # the epsilon absorbs products such as 0.9 * 50 landing an ulp above 45
    m = math.ceil((1.0 - alpha) * k - 1e-9)
    return min(max(m, 1), k)


def conformal_quantile(scores, alpha: float) -> float:
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise DomainError("conformal_quantile needs at least one score")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    m = quantile_rank(scores.size, alpha)
    return float(np.partition(scores, m - 1)[m - 1])


def prediction_set(row, q: float) -> set[int]:
    row = np.asarray(row, dtype=float)
    return {int(c) for c in np.flatnonzero(1.0 - row <= q)}


def prediction_sets(index: NeighborIndex, features, mean_probs, config: ConformalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Membership matrix (N x C booleans) and local thresholds ``q`` for many samples."""
    config.check_against(index)
    features = as_features(features)
    probs = np.asarray(mean_probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] != features.shape[0]:
        raise DomainError(
            f"features ({features.shape[0]} rows) and probabilities {probs.shape} disagree"
        )
    if probs.shape[0] == 0:
        return np.zeros(probs.shape, dtype=bool), np.zeros(0)
    nbr, _ = knn_batch(index, features, config.k)
    m = quantile_rank(config.k, config.alpha)
    q = np.partition(index.nonconformity[nbr], m - 1, axis=1)[:, m - 1]
    return (1.0 - probs) <= q[:, None], q


def stratify(index: NeighborIndex, features, mean_probs, predicted=None,
             config: ConformalConfig | None = None) -> StratificationFlags:
    """Flag each sample putatively correct (True) or putatively incorrect (False).

    ``predicted`` defaults to the argmax of ``mean_probs``. Samples with
    empty or multi-class prediction sets, or with a singleton that disagrees
    with the predicted label, are flagged False.
    """
    config = config or ConformalConfig()
    probs = np.asarray(mean_probs, dtype=float)
    members, q = prediction_sets(index, features, probs, config)
    predicted = predicted_labels(probs) if predicted is None else np.asarray(predicted, dtype=np.int64)
    if predicted.shape[0] != probs.shape[0]:
        raise DomainError("predicted labels and probabilities differ in length")
    sizes = members.sum(axis=1).astype(np.int64)
    flags = (sizes == 1) & members[np.arange(sizes.size), predicted]
    return StratificationFlags(flags=flags, set_sizes=sizes, quantiles=q)


@dataclass(frozen=True)
class StratificationReport:
    """Group sizes and accuracies, in percent; NaN marks an empty group."""

    correct_size: float
    correct_accuracy: float
    incorrect_size: float
    incorrect_accuracy: float

    def to_dict(self) -> dict:
        return {k: (None if math.isnan(v) else v) for k, v in self.__dict__.items()}


def stratification_report(flags, correctness) -> StratificationReport:
    flags = flag_array(flags)
    correctness = np.asarray(correctness, dtype=bool)
    if flags.shape != correctness.shape:
        raise DomainError(f"flags {flags.shape} and correctness {correctness.shape} differ in shape")
    n = flags.size
    if n == 0:
        raise DomainError("stratification report needs at least one sample")

    def group(mask):
        size = 100.0 * mask.sum() / n
        acc = 100.0 * correctness[mask].mean() if mask.any() else math.nan
        return float(size), float(acc)

    cs, ca = group(flags)
    is_, ia = group(~flags)
    return StratificationReport(cs, ca, is_, ia)


def empirical_coverage(index: NeighborIndex, features, mean_probs, labels, config: ConformalConfig) -> float:
    """Fraction of samples whose true label lies in their prediction set."""
    members, _ = prediction_sets(index, features, mean_probs, config)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != members.shape[0]:
        raise DomainError(f"{labels.shape[0]} labels for {members.shape[0]} samples")
    if labels.size == 0:
        raise DomainError("coverage of zero samples")
    return float(members[np.arange(labels.size), labels].mean())
