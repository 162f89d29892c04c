"""Statistical comparison of methods over repeated runs.

Friedman omnibus test, one-sided Wilcoxon signed-rank tests with Holm
adjustment, and Cliff's delta effect sizes. Lower metric values are better:
rank 1 goes to the smallest value in a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DomainError, ValidationError

EXACT_MAX_N = 25
EXACT_MAX_N_UNTIED = 30


@dataclass(frozen=True)
class RunMatrix:
    values: np.ndarray
    methods: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError(f"run matrix must be 2-D, got shape {v.shape}")
        n, k = v.shape
        if n < 2 or k < 2:
            raise ValidationError(f"need at least 2 runs and 2 methods, got {n} x {k}")
        if len(self.methods) != k:
            raise ValidationError(f"{len(self.methods)} method names for {k} columns")
        if len(set(self.methods)) != k:
            raise ValidationError(f"duplicate method names in {self.methods}")
        if not np.all(np.isfinite(v)):
            r, c = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(f"missing or non-finite value at run {r}, method {self.methods[c]!r}")
        object.__setattr__(self, "values", v)

    def column(self, method: str) -> np.ndarray:
        return self.values[:, self.methods.index(method)]


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    pvalue: float
    average_ranks: dict


def friedman(rm: RunMatrix) -> FriedmanResult:
    """Friedman chi-square with the usual tie correction."""
    v = rm.values
    n, k = v.shape
    ranks = np.apply_along_axis(sps.rankdata, 1, v)
    rank_sums = ranks.sum(axis=0)
    avg = {m: float(r) for m, r in zip(rm.methods, rank_sums / n)}
    stat = 12.0 / (n * k * (k + 1)) * np.sum(rank_sums ** 2) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in v:
        _, counts = np.unique(row, return_counts=True)
        ties += np.sum(counts ** 3 - counts)
    correction = 1.0 - ties / (n * k * (k * k - 1))
    if correction <= 0:
        return FriedmanResult(0.0, 1.0, avg)
    stat = float(stat / correction)
    # rank sums are exact multiples of 0.5, so tiny negatives are rounding noise
    stat = max(stat, 0.0)
    return FriedmanResult(stat, float(sps.chi2.sf(stat, k - 1)), avg)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences; NaN if undefined
    pvalue: float
    n: int  # non-zero differences
    method: str  # "exact", "normal" or "undefined"


def _exact_lower_tail(doubled_ranks: np.ndarray, w2: int) -> float:
    """P(W <= w) under the null, enumerating all 2^n sign assignments.

    Works on doubled ranks so average ranks stay integral.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    return float(counts[: w2 + 1].sum() / 2.0 ** doubled_ranks.size)


def wilcoxon_one_sided(x, y) -> WilcoxonResult:
    """Signed-rank test of H1: median(x - y) < 0.

    Zero differences are dropped and tied magnitudes share average ranks.
    The exact null distribution is used for up to 25 differences, or up to
    30 when all magnitudes are distinct; otherwise a normal approximation
    with tie-adjusted variance and continuity correction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"x and y must be 1-D of equal length, got {x.shape} and {y.shape}")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(math.nan, math.nan, 0, "undefined")
    if n < 5:
        raise DomainError(f"need at least 5 non-zero differences, got {n}")

    ranks = sps.rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tied = bool(np.any(tie_counts > 1))

    if n <= EXACT_MAX_N or (n <= EXACT_MAX_N_UNTIED and not tied):
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = _exact_lower_tail(doubled, int(round(2 * w)))
        return WilcoxonResult(w, min(p, 1.0), n, "exact")

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (w - mean + 0.5) / math.sqrt(var)
    return WilcoxonResult(w, float(sps.norm.cdf(z)), n, "normal")


def holm(pvals) -> np.ndarray:
    """Holm step-down adjustment, returned in input order."""
    p = np.asarray(pvals, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.empty(m)
    adjusted[order] = np.maximum.accumulate(scaled)
    return adjusted


def cliffs_delta(x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise DomainError("Cliff's delta needs two non-empty samples")
    return float(np.sign(x[:, None] - y[None, :]).sum() / (x.size * y.size))


def pairwise_vs_reference(rm: RunMatrix, reference: str) -> list[dict]:
    """One-sided tests of ``reference < other`` for every other method, Holm-adjusted."""
    if reference not in rm.methods:
        raise DomainError(f"unknown reference method {reference!r}; have {rm.methods}")
    ref = rm.column(reference)
    rows = []
    for other in rm.methods:
        if other == reference:
            continue
        res = wilcoxon_one_sided(ref, rm.column(other))
        rows.append({
            "reference": reference,
            "other": other,
            "W": res.statistic,
            "p": res.pvalue,
            "method": res.method,
            "cliffs_delta": cliffs_delta(ref, rm.column(other)),
            "median_difference": float(np.median(ref - rm.column(other))),
        })
    raw = [r["p"] for r in rows]
    defined = [i for i, p in enumerate(raw) if not math.isnan(p)]
    adjusted = holm([raw[i] for i in defined])
    for r in rows:
        r["p_holm"] = math.nan
    for i, a in zip(defined, adjusted):
        rows[i]["p_holm"] = float(a)
    return rows
