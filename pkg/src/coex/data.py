"""Dataset generation and CSV ingestion.

The synthetic task is built so that expert specialization pays off: samples
live in well-separated Gaussian modes, and within every mode the same local
feature directions map to *different* class labels (a per-mode permutation).
A single small network must jointly model position and the permutation; one
specialist per mode only ever sees C prototype clusters.

Dataset CSV format: one row per sample, feature columns then an integer
class label in the last column, no header.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coex.util import rng_for, atomic_write_text

PROTOTYPE_SCALE = 2.0


@dataclass
class Dataset:
    features: np.ndarray  # (N, d) float64
    labels: np.ndarray  # (N,) int64 in [0, class_count)
    class_count: int
    mode_id: np.ndarray | None = None  # synthetic ground-truth specialty

    def __post_init__(self):
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if (self.labels < 0).any() or (self.labels >= self.class_count).any():
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class SyntheticSpec:
    modes: int = 4
    classes: int = 8
    dim: int = 32
    samples: int = 24000
    mode_separation: float = 6.0
    noise_std: float = 1.0
    label_rule: str | list = "cyclic"  # or "random", or explicit per-mode permutations
    seed: int = 0


def _mode_permutations(spec: SyntheticSpec) -> np.ndarray:
    """Per-mode class permutations: local direction i carries label
    perms[mode][i]."""
    m, c = spec.modes, spec.classes
    if spec.label_rule == "cyclic":
        return np.array([[(i + mode) % c for i in range(c)] for mode in range(m)])
    if spec.label_rule == "random":
        rng = rng_for(spec.seed, "label-rule")
        return np.stack([rng.permutation(c) for _ in range(m)])
    perms = np.asarray(spec.label_rule, dtype=np.int64)
    if perms.shape != (m, c) or any(sorted(row) != list(range(c)) for row in perms.tolist()):
        raise ValueError("explicit label_rule must be one permutation of range(classes) per mode")
    return perms


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample the mode-structured task; deterministic in spec.seed.

    Class and mode counts are stratified (each within one sample of exact
    uniform), then the order is shuffled.
    """
    m, c, d, n = spec.modes, spec.classes, spec.dim, spec.samples
    if m < 1 or c < 1 or d < 1:
        raise ValueError("modes, classes and dim must be positive")
    if n < m * c:
        raise ValueError(f"need at least modes*classes={m * c} samples, got {n}")
    if m > d:
        raise ValueError("mode centers use one axis each; need dim >= modes")

    perms = _mode_permutations(spec)
    proto_rng = rng_for(spec.seed, "prototypes")
    directions = proto_rng.normal(size=(c, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = np.zeros((m, d))
    centers[np.arange(m), np.arange(m)] = spec.mode_separation

    # stratified (direction, mode) pairs: direction cycles fastest so class
    # counts differ by at most one sample
    idx = np.arange(n)
    dirs = idx % c
    modes = (idx // c) % m
    order = rng_for(spec.seed, "order").permutation(n)
    dirs, modes = dirs[order], modes[order]

    noise = rng_for(spec.seed, "noise").normal(size=(n, d)) * spec.noise_std
    features = centers[modes] + PROTOTYPE_SCALE * directions[dirs] + noise
    labels = perms[modes, dirs]
    return Dataset(features=features, labels=labels.astype(np.int64),
                   class_count=c, mode_id=modes.astype(np.int64))


def split_dataset(ds: Dataset, first: int) -> tuple[Dataset, Dataset]:
    """Split into the first ``first`` samples and the rest (generation order
    is already shuffled)."""
    if not 0 < first < len(ds):
        raise ValueError(f"split point {first} outside (0, {len(ds)})")

    def take(sl):
        return Dataset(features=ds.features[sl], labels=ds.labels[sl],
                       class_count=ds.class_count,
                       mode_id=None if ds.mode_id is None else ds.mode_id[sl])

    return take(slice(None, first)), take(slice(first, None))


def coe4_synth(seed: int) -> tuple[Dataset, Dataset]:
    """The fixed benchmark: 4 modes, 8 classes, 32 dims, 20000 train +
    4000 validation samples drawn from one seeded generation."""
    spec = SyntheticSpec(modes=4, classes=8, dim=32, samples=24000, seed=seed)
    return split_dataset(generate_synthetic(spec), 20000)


def save_csv(path, ds: Dataset) -> None:
    lines = []
    for row, label in zip(ds.features, ds.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_csv(path) -> Dataset:
    """Parse a dataset CSV; the class count is the maximum label plus one,
    and every label in that range must occur."""
    path = Path(path)
    features, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) < 2:
                raise ValueError(f"{path}:{lineno}: need at least one feature and a label")
            try:
                features.append([float(v) for v in cells[:-1]])
                label = float(cells[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from None
            if label != int(label):
                raise ValueError(f"{path}:{lineno}: label must be an integer, got {cells[-1]}")
            labels.append(int(label))
    if not features:
        raise ValueError(f"{path}: empty dataset file")
    widths = {len(row) for row in features}
    if len(widths) > 1:
        raise ValueError(f"{path}: inconsistent column counts {sorted(widths)}")
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0:
        raise ValueError(f"{path}: negative class label")
    class_count = int(y.max()) + 1
    missing = sorted(set(range(class_count)) - set(y.tolist()))
    if missing:
        raise ValueError(f"{path}: labels are not contiguous; classes {missing} never occur")
    return Dataset(features=np.asarray(features, dtype=np.float64), labels=y,
                   class_count=class_count)
