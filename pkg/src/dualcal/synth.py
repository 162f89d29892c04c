"""Gaussian-cluster data with a distance-softmax surrogate for stochastic passes.

Each pass scores a sample by ``-sharpness * ||x - centroid_c||`` plus
independent Gaussian noise of scale ``pass_noise`` and applies a softmax.
Sharpness above the value that would be calibrated makes the surrogate
overconfident, which gives the calibrators something to correct.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .data_model import SPLIT_NAMES, SplitSpec, as_stack, split, write_csv, write_stack
from .errors import ConfigError


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 10
    per_class: int = 600
    dim: int = 16
    separation: float = 2.6
    spread: float = 1.0
    passes: int = 20
    sharpness: float = 7.5
    pass_noise: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.per_class < 1 or self.dim < 1 or self.passes < 1:
            raise ConfigError("per_class, dim and passes must be positive")
        if self.separation <= 0 or self.sharpness <= 0:
            raise ConfigError("separation and sharpness must be positive")
        if self.spread < 0 or self.pass_noise < 0:
            raise ConfigError("spread and pass_noise must be non-negative")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")

    @property
    def n_samples(self) -> int:
        return self.n_classes * self.per_class


def _rng(cfg: SynthConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def make_centroids(cfg: SynthConfig) -> np.ndarray:
    """Random directions scaled onto the sphere of radius ``separation``."""
    g = _rng(cfg, 0).standard_normal((cfg.n_classes, cfg.dim))
    return cfg.separation * g / np.linalg.norm(g, axis=1, keepdims=True)


def generate(cfg: SynthConfig, centroids: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian samples around each centroid, ``per_class`` per class."""
    centroids = make_centroids(cfg) if centroids is None else np.asarray(centroids, dtype=float)
    labels = np.repeat(np.arange(cfg.n_classes), cfg.per_class)
    noise = _rng(cfg, 1).standard_normal((labels.size, cfg.dim))
    features = centroids[labels] + cfg.spread * noise
    return features, labels


def centroid_distances(features, centroids) -> np.ndarray:
    diff = np.asarray(features, dtype=float)[:, None, :] - np.asarray(centroids, dtype=float)[None, :, :]
    return np.sqrt(np.einsum("ncd,ncd->nc", diff, diff))


def simulate_passes(features, centroids, cfg: SynthConfig) -> np.ndarray:
    """T x N x C stack of softmax rows over noisy negative-distance logits."""
    logits = -cfg.sharpness * centroid_distances(features, centroids)
    n, c = logits.shape
    if cfg.pass_noise > 0:
        eps = _rng(cfg, 2).standard_normal((cfg.passes, n, c))
        stack = softmax(logits[None] + cfg.pass_noise * eps, axis=2)
    else:
        stack = np.broadcast_to(softmax(logits, axis=1), (cfg.passes, n, c))
    return as_stack(stack)


def nearest_centroid_accuracy(features, labels, centroids) -> float:
    pred = np.argmin(centroid_distances(features, centroids), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


@dataclass(frozen=True)
class SplitData:
    features: np.ndarray
    labels: np.ndarray
    stack: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.stack.mean(axis=0)


def make_splits(cfg: SynthConfig, spec: SplitSpec | None = None) -> dict[str, SplitData]:
    """Generate, simulate and split in memory; keys are train/conformal/calibration/test."""
    spec = spec or SplitSpec(seed=cfg.seed)
    centroids = make_centroids(cfg)
    features, labels = generate(cfg, centroids)
    stack = simulate_passes(features, centroids, cfg)
    parts = split(labels.size, spec)
    return {
        name: SplitData(features[idx], labels[idx], stack[:, idx, :])
        for name, idx in zip(SPLIT_NAMES, parts)
    }


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_benchmark(cfg: SynthConfig, spec: SplitSpec | None, out_dir) -> dict:
    """Write the four splits under ``out_dir`` and return the bundle manifest."""
    spec = spec or SplitSpec(seed=cfg.seed)
    out_dir = Path(out_dir)
    splits = make_splits(cfg, spec)
    sizes, digests = {}, {}
    for name, data in splits.items():
        d = out_dir / name
        write_csv(d / "features.csv", data.features, "features")
        write_csv(d / "labels.csv", data.labels, "labels")
        write_stack(d, data.stack)
        sizes[name] = int(data.labels.size)
        for f in sorted(d.glob("*.csv")):
            digests[f"{name}/{f.name}"] = _digest(f)
    manifest = {
        "config": asdict(cfg),
        "split": asdict(spec),
        "sizes": sizes,
        "digests": dict(sorted(digests.items())),
    }
    (out_dir / "bundle.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
