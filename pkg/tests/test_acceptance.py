"""Acceptance criteria AC-1 .. AC-9, each printed as one PASS/FAIL line."""

import time

import numpy as np
import pytest

from dualcal.conformal import ConformalConfig, build_index, empirical_coverage, knn_batch
from dualcal.data_model import predicted_labels
from dualcal.experiment import at_tau, run_mode, summarize
from dualcal.isotonic import pava_fit, pava_objective
from dualcal.metrics import brier, ece, reliability_bins
from dualcal.stats import RunMatrix, friedman, pairwise_vs_reference, wilcoxon_one_sided
from dualcal.synth import SynthConfig, make_splits

from conftest import ACCEPTANCE_LINES
from oracles import knn_full_sort, partition_oracle

pytestmark = pytest.mark.slow

SEEDS = range(30)
BETA = 0.9
STUDY_CONFIG = ConformalConfig(k=20, alpha=0.1)
# label preservation checks collected from every dual run below
PRESERVATION: list[tuple[str, int, int]] = []


def record(ac, ok, detail):
    line = f"{ac} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def dual_with_check(name, splits, config, beta):
    res = run_mode("dual", splits["conformal"], splits["calibration"], splits["test"], config, beta)
    raw = predicted_labels(splits["test"].mean)
    PRESERVATION.append((name, int(np.sum(res.predicted == raw)), raw.size))
    return res


@pytest.fixture(scope="module")
def seed_study():
    start = time.perf_counter()
    fc, ug, h = {"dual": [], "isotonic": [], "none": []}, {"dual": [], "isotonic": []}, {}
    for seed in SEEDS:
        splits = make_splits(SynthConfig(seed=seed))
        labels = splits["test"].labels
        reps = {}
        for mode in ("none", "isotonic"):
            res = run_mode(mode, splits["conformal"], splits["calibration"], splits["test"], STUDY_CONFIG, BETA)
            reps[mode] = summarize(res, labels)
        reps["dual"] = summarize(dual_with_check(f"seed{seed}", splits, STUDY_CONFIG, BETA), labels)
        for mode in fc:
            fc[mode].append(at_tau(reps[mode], 0.5)["fc_pct"])
        for mode in ug:
            ug[mode].append(at_tau(reps[mode], 0.5)["ug_mean"] * 100)
        if seed == 0:
            h = {m: reps[m]["incorrect_entropy"] for m in reps}
    return {"fc": fc, "ug": ug, "entropy_seed0": h, "seconds": time.perf_counter() - start}


def test_ac1_pava_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, monotone = 0.0, True
    for _ in range(500):
        n = int(rng.integers(1, 7))
        s = rng.integers(0, 6, n) / 5.0
        y = rng.integers(0, 5, n) / 4.0
        w = rng.integers(1, 4, n).astype(float)
        m = pava_fit(s, y, w)
        obj, _ = partition_oracle(s, y, w)
        worst = max(worst, abs(pava_objective(m, s, y, w) - obj))
        monotone &= bool(np.all(np.diff(m.predict(np.sort(s))) >= 0))
    secs = time.perf_counter() - start
    record("AC-1", worst <= 1e-9 and monotone and secs < 10,
           f"max |objective - oracle| = {worst:.2e} (tol 1e-9), monotone={monotone}, {secs:.2f}s (< 10s)")


def test_ac2_knn_exact():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        n, d = int(rng.integers(1, 201)), int(rng.integers(1, 9))
        x = rng.integers(-3, 4, (n, d)).astype(float)
        y = rng.integers(0, 2, n)
        index = build_index(x, y, np.eye(2)[y])
        q = rng.integers(-3, 4, (1, d)).astype(float)
        k = int(rng.integers(1, n + 1))
        got, _ = knn_batch(index, q, k)
        mismatches += got[0].tolist() != knn_full_sort(x, q[0], k)
    secs = time.perf_counter() - start
    record("AC-2", mismatches == 0 and secs < 5,
           f"{mismatches}/200 instances differ from full-sort oracle, {secs:.2f}s (< 5s)")


def test_ac3_calibrated_simulation():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    n, c = 100_000, 10
    p = rng.dirichlet(np.full(c, 0.5), size=n)
    u = rng.random(n)[:, None]
    y = np.minimum((u > np.cumsum(p, axis=1)).sum(axis=1), c - 1)
    e = ece(reliability_bins(p, y, 15))
    expected_brier = float(np.mean(1.0 - np.sum(p ** 2, axis=1)))
    b = brier(p, y)
    secs = time.perf_counter() - start
    record("AC-3", e <= 0.01 and abs(b - expected_brier) <= 0.005 and secs < 30,
           f"ECE = {e:.4f} (<= 0.01), Brier {b:.4f} vs analytic {expected_brier:.4f} "
           f"(|diff| {abs(b - expected_brier):.4f} <= 0.005), {secs:.2f}s (< 30s)")


def test_ac4_reference_statistics():
    start = time.perf_counter()
    v = np.tile([1.0, 2.0, 3.0, 4.0], (30, 1)) * (1 + np.arange(30)[:, None])
    fr = friedman(RunMatrix(v, ("a", "b", "c", "d")))
    x = np.arange(1, 31) * 0.01
    neg = wilcoxon_one_sided(x, x + np.arange(1, 31) * 0.1)
    pos = wilcoxon_one_sided(x + np.arange(1, 31) * 0.1, x)
    secs = time.perf_counter() - start
    ok = (abs(fr.statistic - 90.0) < 1e-9 and fr.pvalue < 3e-19 and neg.statistic == 0
          and abs(neg.pvalue - 2.0 ** -30) <= 1e-12 and pos.statistic == 465 and secs < 5)
    record("AC-4", ok,
           f"Friedman chi2 = {fr.statistic:.6f}, p = {fr.pvalue:.3e}; Wilcoxon W = {neg.statistic:.0f}, "
           f"p = {neg.pvalue:.4e} (2^-30 = {2.0 ** -30:.4e}); reversed W = {pos.statistic:.0f}; {secs:.2f}s")


def test_ac5_dual_reduces_false_certainty(seed_study):
    fc, ug = seed_study["fc"], seed_study["ug"]
    rm = RunMatrix(np.column_stack([fc["dual"], fc["isotonic"], fc["none"]]), ("dual", "isotonic", "none"))
    rows = {r["other"]: r for r in pairwise_vs_reference(rm, "dual")}
    p_holm = rows["isotonic"]["p_holm"]
    mean_fc_d, mean_fc_i = np.mean(fc["dual"]), np.mean(fc["isotonic"])
    ug_drop = np.mean(ug["isotonic"]) - np.mean(ug["dual"])
    secs = seed_study["seconds"]
    ok = mean_fc_d < mean_fc_i and p_holm < 0.05 and ug_drop <= 5.0 and secs < 300
    record("AC-5", ok,
           f"FC% at tau=0.5 over {len(SEEDS)} seeds: dual {mean_fc_d:.2f} vs isotonic {mean_fc_i:.2f}, "
           f"Holm p = {p_holm:.2e} (< 0.05); UG-Mean dual {np.mean(ug['dual']):.2f} vs isotonic "
           f"{np.mean(ug['isotonic']):.2f} (drop {ug_drop:.2f} <= 5); {secs:.1f}s (< 300s)")


def test_ac6_ablation_directions():
    start = time.perf_counter()
    splits = make_splits(SynthConfig(seed=0))
    labels = splits["test"].labels
    eces = []
    for beta in (0.25, 0.5, 0.75, 1.0):
        res = dual_with_check(f"beta={beta}", splits, STUDY_CONFIG, beta)
        eces.append(summarize(res, labels, taus=[0.5])["ece"])
    fcs, tcs = [], []
    for k in (10, 50, 200):
        res = dual_with_check(f"k={k}", splits, ConformalConfig(k=k, alpha=STUDY_CONFIG.alpha), BETA)
        row = summarize(res, labels, taus=[0.5])["uncertainty"][0]
        fcs.append(row["fc_pct"])
        tcs.append(row["tc_pct"])
    secs = time.perf_counter() - start

    def non_increasing(v):
        return all(b <= a for a, b in zip(v, v[1:]))

    ok = non_increasing(eces) and non_increasing(fcs) and non_increasing(tcs) and secs < 180
    record("AC-6", ok,
           f"ECE over beta 0.25..1: {[round(e, 4) for e in eces]}; FC% over K 10/50/200: "
           f"{[round(f, 2) for f in fcs]}; TC%: {[round(t, 2) for t in tcs]}; {secs:.1f}s (< 180s)")


def test_ac7_entropy_shift():
    start = time.perf_counter()
    splits = make_splits(SynthConfig(seed=0))
    labels = splits["test"].labels
    iso = summarize(run_mode("isotonic", splits["conformal"], splits["calibration"], splits["test"],
                             STUDY_CONFIG, BETA), labels)
    du = summarize(dual_with_check("entropy", splits, STUDY_CONFIG, BETA), labels)
    gap = du["incorrect_entropy"] - iso["incorrect_entropy"]
    secs = time.perf_counter() - start
    record("AC-7", gap >= 0.05 and secs < 60,
           f"mean entropy of incorrect predictions: dual {du['incorrect_entropy']:.4f} vs isotonic "
           f"{iso['incorrect_entropy']:.4f}, gap {gap:.4f} (>= 0.05); {secs:.1f}s (< 60s)")


def test_ac8_conformal_coverage():
    start = time.perf_counter()
    cfg = SynthConfig(per_class=500, seed=8)
    splits = make_splits(cfg)
    rng = np.random.default_rng(8)
    # pool everything, draw labels from each sample's own probability row, split in half
    features = np.concatenate([s.features for s in splits.values()])
    probs = np.concatenate([s.mean for s in splits.values()])
    u = rng.random(len(probs))[:, None]
    labels = np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)
    order = rng.permutation(len(probs))
    half = len(order) // 2
    a, b = order[:half], order[half:]
    index = build_index(features[a], labels[a], probs[a])
    cov = empirical_coverage(index, features[b], probs[b], labels[b], ConformalConfig(k=50, alpha=0.1))
    secs = time.perf_counter() - start
    record("AC-8", cov >= 0.87 and b.size >= 2000 and secs < 60,
           f"coverage {cov:.4f} on {b.size} held-out samples (>= 0.87), {secs:.1f}s (< 60s)")


def test_ac9_label_preservation(seed_study):
    if not any(name.startswith("beta") for name, _, _ in PRESERVATION):
        test_ac6_ablation_directions()
    if not any(name == "entropy" for name, _, _ in PRESERVATION):
        test_ac7_entropy_shift()
    kept = sum(k for _, k, _ in PRESERVATION)
    total = sum(n for _, _, n in PRESERVATION)
    record("AC-9", total > 0 and kept == total,
           f"{kept}/{total} predicted labels equal the pre-calibration argmax across {len(PRESERVATION)} dual runs")
