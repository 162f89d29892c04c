"""Numeric containers, probability aggregation, entropy, splitting and CSV I/O.

Containers are plain read-only numpy arrays. The ``as_*`` helpers validate
their input, copy it, and freeze the copy, so every array handed out by this
module can be shared freely.

Layouts on disk::

    probs.csv       header c0,...,c{C-1}; one row per sample
    probs_t{t}.csv  one file per stochastic pass of a prediction stack
    features.csv    header f0,...,f{d-1}
    labels.csv      header label; one integer per row
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError, ValidationError

ROW_SUM_TOL = 1e-6
DEGENERATE_ROW_SUM = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def as_stack(values) -> np.ndarray:
    """Validate a T x N x C stack of per-pass probability rows."""
    arr = np.array(values, dtype=float)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValidationError(f"prediction stack must be 3-D (T, N, C), got shape {arr.shape}")
    t, n, c = arr.shape
    if t < 1 or c < 2:
        raise ValidationError(f"prediction stack needs T >= 1 and C >= 2, got T={t}, C={c}")
    _check_rows(arr.reshape(t * n, c), lambda i: f"(t={i // n}, n={i % n})" if n else "")
    return _frozen(np.clip(arr, 0.0, 1.0))


def as_probs(values) -> np.ndarray:
    """Validate a row-stochastic N x C matrix."""
    arr = np.array(values, dtype=float)
    if arr.ndim != 2:
        raise ValidationError(f"probability matrix must be 2-D (N, C), got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise ValidationError(f"probability matrix needs C >= 2, got C={arr.shape[1]}")
    _check_rows(arr, lambda i: f"row {i}")
    return _frozen(np.clip(arr, 0.0, 1.0))


def _check_rows(rows: np.ndarray, where) -> None:
    if not np.all(np.isfinite(rows)):
        bad = int(np.argwhere(~np.isfinite(rows))[0, 0])
        raise ValidationError(f"non-finite probability at {where(bad)}")
    out_of_range = (rows < -ROW_SUM_TOL) | (rows > 1 + ROW_SUM_TOL)
    if out_of_range.any():
        bad = int(np.argwhere(out_of_range)[0, 0])
        raise ValidationError(f"probability outside [0, 1] at {where(bad)}")
    sums = rows.sum(axis=1)
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if off.any():
        bad = int(np.flatnonzero(off)[0])
        raise ValidationError(f"row sum {sums[bad]!r} differs from 1 at {where(bad)}")


def as_labels(labels, n_classes: int | None = None) -> np.ndarray:
    """Validate a vector of 0-based class indices."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValidationError("labels must be integers")
        arr = as_int
    arr = arr.astype(np.int64, copy=True)
    if arr.size and arr.min() < 0:
        raise ValidationError(f"negative label at index {int(np.argmin(arr))}")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        bad = int(np.flatnonzero(arr >= n_classes)[0])
        raise ValidationError(
            f"label {int(arr[bad])} at index {bad} is out of range for C={n_classes}"
        )
    return _frozen(arr)


def as_features(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D (N, d), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValidationError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
    return _frozen(arr)


def mean_over_passes(stack) -> np.ndarray:
    """Average a prediction stack over its stochastic passes."""
    stack = as_stack(stack)
    return _frozen(stack.mean(axis=0))


def predicted_labels(probs) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class index."""
    return _frozen(np.argmax(np.asarray(probs), axis=1).astype(np.int64))


def normalized_entropy(row, n_classes: int | None = None) -> float:
    """Shannon entropy of ``row`` divided by ``ln C``, clamped to [0, 1]."""
    row = np.asarray(row, dtype=float)
    c = row.shape[-1] if n_classes is None else n_classes
    if c < 2:
        raise DomainError(f"normalized entropy needs C >= 2, got {c}")
    if abs(row.sum() - 1.0) > ROW_SUM_TOL:
        raise DomainError(f"row sums to {row.sum()!r}, not 1")
    return float(entropies(row[None, :], c)[0])


def entropies(probs, n_classes: int | None = None) -> np.ndarray:
    """Row-wise normalized entropy of an N x C matrix."""
    probs = np.asarray(probs, dtype=float)
    c = probs.shape[1] if n_classes is None else n_classes
    if c < 2:
        raise DomainError(f"normalized entropy needs C >= 2, got {c}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    h = -terms.sum(axis=1) / math.log(c)
    return np.clip(h, 0.0, 1.0)


def renormalize(matrix) -> np.ndarray:
    """Divide each row by its sum; rows summing below 1e-12 become uniform."""
    m = np.array(matrix, dtype=float)
    if m.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got shape {m.shape}")
    if (m < 0).any():
        bad = np.argwhere(m < 0)[0]
        raise DomainError(f"negative entry at row {bad[0]}, column {bad[1]}")
    sums = m.sum(axis=1, keepdims=True)
    degenerate = sums[:, 0] < DEGENERATE_ROW_SUM
    out = np.divide(m, sums, out=np.zeros_like(m), where=~degenerate[:, None])
    out[degenerate] = 1.0 / m.shape[1]
    return _frozen(out)


@dataclass(frozen=True)
class SplitSpec:
    """Train / conformal / calibration / test fractions plus the shuffling seed."""

    train: float = 0.55
    conformal: float = 0.15
    calibration: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if any(f < 0 for f in fr):
            raise ConfigError(f"split fractions must be non-negative, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")

    @property
    def fractions(self) -> tuple[float, float, float, float]:
        return (self.train, self.conformal, self.calibration, self.test)


SPLIT_NAMES = ("train", "conformal", "calibration", "test")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int, int]:
    others = [math.floor(f * n + 1e-9) for f in spec.fractions[1:]]
    return (n - sum(others), *others)


def split(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` with ``spec.seed`` and cut it into four sorted index sets.

    Held-out subsets get ``floor(fraction * n)`` samples; the flooring
    remainder goes to the training subset.
    """
    if n < 4:
        raise ConfigError(f"need at least 4 samples to split, got {n}")
    sizes = split_sizes(n, spec)
    for name, size in zip(SPLIT_NAMES, sizes):
        if size < 1:
            raise ConfigError(f"split '{name}' would be empty for N={n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return tuple(_frozen(np.sort(part)) for part in np.split(perm, cuts))


# --- CSV I/O ---------------------------------------------------------------

_PREFIX = {"probs": "c", "features": "f"}


def _fmt(x: float) -> str:
    # repr() is the shortest string that round-trips exactly
    return repr(float(x))


def write_csv(path, values, kind: str) -> None:
    """Write a probs / features / labels container in its canonical layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if kind == "labels":
            writer.writerow(["label"])
            writer.writerows([[int(v)] for v in np.asarray(values).ravel()])
        elif kind in _PREFIX:
            arr = np.asarray(values, dtype=float)
            if arr.ndim != 2:
                raise ValidationError(f"{kind} must be 2-D, got shape {arr.shape}")
            writer.writerow([f"{_PREFIX[kind]}{j}" for j in range(arr.shape[1])])
            writer.writerows([[_fmt(v) for v in row] for row in arr])
        else:
            raise DomainError(f"unknown CSV kind {kind!r}")


def read_csv(path, kind: str, n_classes: int | None = None) -> np.ndarray:
    """Read a container written by :func:`write_csv`, validating as it goes."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file, expected a header row")
    header, body = rows[0], rows[1:]

    if kind == "labels":
        if header != ["label"]:
            raise ParseError(f"{path}: row 1: expected header 'label', got {','.join(header)!r}")
        out = []
        for i, row in enumerate(body, start=2):
            if len(row) != 1:
                raise ParseError(f"{path}: row {i}: expected 1 value, got {len(row)}")
            try:
                out.append(int(row[0]))
            except ValueError:
                raise ParseError(f"{path}: row {i}, column 1: non-integer label {row[0]!r}") from None
        try:
            return as_labels(np.array(out, dtype=np.int64), n_classes)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None

    if kind not in _PREFIX:
        raise DomainError(f"unknown CSV kind {kind!r}")
    prefix = _PREFIX[kind]
    expected = [f"{prefix}{j}" for j in range(len(header))]
    if not header or header != expected:
        raise ParseError(f"{path}: row 1: expected header {prefix}0,...,{prefix}{{k}}, got {','.join(header)!r}")
    width = len(header)
    data = np.empty((len(body), width), dtype=float)
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise ParseError(f"{path}: row {i}: expected {width} values, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i}, column {j + 1} ({header[j]}): non-numeric cell {cell!r}") from None
    try:
        return as_probs(data) if kind == "probs" else as_features(data)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_stack(directory, stack) -> None:
    stack = np.asarray(stack)
    for t, probs in enumerate(stack):
        write_csv(Path(directory) / f"probs_t{t}.csv", probs, "probs")


def read_stack(directory) -> np.ndarray:
    directory = Path(directory)
    passes = []
    t = 0
    while (directory / f"probs_t{t}.csv").is_file():
        passes.append(read_csv(directory / f"probs_t{t}.csv", "probs"))
        t += 1
    if not passes:
        raise ParseError(f"{directory}: no probs_t0.csv found")
    shapes = {p.shape for p in passes}
    if len(shapes) != 1:
        raise ParseError(f"{directory}: pass files disagree in shape: {sorted(shapes)}")
    return as_stack(np.stack(passes))
