"""Domain-shifted datasets at desk scale.

Synthetic generators produce a source domain and a transformed target
domain from the same class conditionals; the target is split into train
and test, and target-train labels are only revealed through the oracle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix

__all__ = [
    "Dataset",
    "PoolState",
    "ShiftSpec",
    "export_csv",
    "generate_shift",
    "load_idx",
    "oracle_label",
]

GENERATORS = ("gauss_mixture", "two_moons")

# Class means for gauss_mixture sit on a circle of this radius; shift
# difficulty is then controlled purely by rotation/perturbation/noise.
_MIXTURE_RADIUS = 4.0

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels must be 1-D and aligned with features")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ShiftSpec:
    generator: str = "gauss_mixture"
    num_classes: int = 4
    n_source: int = 1000
    n_target: int = 1000
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    mean_perturbation: float = 0.0
    noise_scale: float = 1.0
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.generator == "two_moons" and self.num_classes != 2:
            raise ValueError("two_moons is a 2-class generator")
        if self.n_source <= 0 or self.n_target <= 0:
            raise ValueError("sample counts must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


def _class_counts(n: int, c: int) -> np.ndarray:
    counts = np.full(c, n // c, dtype=np.int64)
    counts[: n % c] += 1
    return counts


def _sample_gauss_mixture(rng, n, num_classes, noise_scale):
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = _MIXTURE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    counts = _class_counts(n, num_classes)
    feats = []
    labels = []
    for c, count in enumerate(counts):
        feats.append(means[c] + noise_scale * rng.normal(size=(count, 2)))
        labels.append(np.full(count, c, dtype=np.int64))
    return np.concatenate(feats), np.concatenate(labels)


def _sample_two_moons(rng, n, noise_scale):
    counts = _class_counts(n, 2)
    t0 = rng.uniform(0.0, np.pi, size=counts[0])
    t1 = rng.uniform(0.0, np.pi, size=counts[1])
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    feats = np.concatenate([upper, lower]) + noise_scale * rng.normal(size=(n, 2))
    labels = np.concatenate([np.zeros(counts[0], dtype=np.int64), np.ones(counts[1], dtype=np.int64)])
    return feats, labels


def _apply_shift(rng, feats, labels, spec: ShiftSpec):
    cos_r, sin_r = np.cos(spec.rotation), np.sin(spec.rotation)
    rot = np.array([[cos_r, -sin_r], [sin_r, cos_r]])
    shifted = feats @ rot.T + np.asarray(spec.translation, dtype=np.float64)
    if spec.mean_perturbation > 0:
        per_class = spec.mean_perturbation * rng.normal(size=(spec.num_classes, 2))
        shifted = shifted + per_class[labels]
    return shifted


def generate_shift(spec: ShiftSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Sample (source, target_train, target_test), deterministic under spec.seed.

    Target points come from the same class conditionals as the source and
    are then rotated, translated, and per-class perturbed; the target is
    split train/test by spec.test_fraction after shuffling.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.generator == "gauss_mixture":
        src_x, src_y = _sample_gauss_mixture(rng, spec.n_source, spec.num_classes, spec.noise_scale)
        tgt_x, tgt_y = _sample_gauss_mixture(rng, spec.n_target, spec.num_classes, spec.noise_scale)
    else:
        src_x, src_y = _sample_two_moons(rng, spec.n_source, spec.noise_scale)
        tgt_x, tgt_y = _sample_two_moons(rng, spec.n_target, spec.noise_scale)
    tgt_x = _apply_shift(rng, tgt_x, tgt_y, spec)

    src_order = rng.permutation(spec.n_source)
    tgt_order = rng.permutation(spec.n_target)
    src_x, src_y = src_x[src_order], src_y[src_order]
    tgt_x, tgt_y = tgt_x[tgt_order], tgt_y[tgt_order]

    n_test = int(round(spec.test_fraction * spec.n_target))
    n_train = spec.n_target - n_test
    source = Dataset(src_x, src_y, spec.num_classes)
    target_train = Dataset(tgt_x[:n_train], tgt_y[:n_train], spec.num_classes)
    target_test = Dataset(tgt_x[n_train:], tgt_y[n_train:], spec.num_classes)
    return source, target_train, target_test


def _read_idx_header(raw: bytes, path, expected_magic: int, n_dims: int):
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{n_dims}i", raw[4:header_len])
    return dims, raw[header_len:]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a float64 dataset in [0, 1]."""
    with open(images_path, "rb") as f:
        img_raw = f.read()
    with open(labels_path, "rb") as f:
        lbl_raw = f.read()

    (n_img, n_rows, n_cols), img_payload = _read_idx_header(img_raw, images_path, _IDX_IMAGE_MAGIC, 3)
    (n_lbl,), lbl_payload = _read_idx_header(lbl_raw, labels_path, _IDX_LABEL_MAGIC, 1)

    expected = n_img * n_rows * n_cols
    if len(img_payload) != expected:
        raise ValueError(f"{images_path}: payload has {len(img_payload)} bytes, expected {expected}")
    if len(lbl_payload) != n_lbl:
        raise ValueError(f"{labels_path}: payload has {len(lbl_payload)} bytes, expected {n_lbl}")
    if n_img != n_lbl:
        raise ValueError(f"image count {n_img} does not match label count {n_lbl}")

    pixels = np.frombuffer(img_payload, dtype=np.uint8).reshape(n_img, n_rows * n_cols)
    labels = np.frombuffer(lbl_payload, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if n_lbl else 2
    return Dataset(pixels.astype(np.float64) / 255.0, labels, max(num_classes, 2))


@dataclass
class PoolState:
    """Labeled/unlabeled bookkeeping over target-train indices.

    Indices only ever move from unlabeled to labeled; `labeled` preserves
    acquisition order and `revealed` is aligned with it.
    """

    num_instances: int
    labeled: list[int] = field(default_factory=list)
    revealed: list[int] = field(default_factory=list)
    _is_labeled: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_instances <= 0:
            raise ValueError("pool must cover at least one instance")
        if self._is_labeled is None:
            self._is_labeled = np.zeros(self.num_instances, dtype=bool)
            for i in self.labeled:
                self._is_labeled[i] = True

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.asarray(self.labeled, dtype=np.int64)

    @property
    def revealed_labels(self) -> np.ndarray:
        return np.asarray(self.revealed, dtype=np.int64)

    @property
    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self._is_labeled)

    def check_partition(self) -> None:
        if len(self.labeled) != int(self._is_labeled.sum()) or len(self.labeled) != len(set(self.labeled)):
            raise AssertionError("pool partition violated")


def oracle_label(pool: PoolState, dataset: Dataset, indices) -> np.ndarray:
    """Reveal labels for unlabeled target-train indices, moving them into the pool.

    Each index may be revealed at most once; out-of-range or already-labeled
    indices raise without mutating the pool.
    """
    idx = [int(i) for i in indices]
    if len(idx) != len(set(idx)):
        raise ValueError("duplicate indices in oracle request")
    for i in idx:
        if not 0 <= i < pool.num_instances:
            raise ValueError(f"index {i} is not a target-train instance")
        if pool._is_labeled[i]:
            raise ValueError(f"index {i} was already labeled")
    revealed = dataset.labels[idx].copy()
    for i, y in zip(idx, revealed):
        pool._is_labeled[i] = True
        pool.labeled.append(i)
        pool.revealed.append(int(y))
    pool.check_partition()
    return revealed


def export_csv(path, source: Dataset, target_train: Dataset, target_test: Dataset) -> None:
    """Write the three splits as one CSV: feature_0..feature_{D-1}, label, split."""
    dim = source.features.shape[1]
    header = ",".join([f"feature_{j}" for j in range(dim)] + ["label", "split"])
    with open(path, "w", newline="") as f:
        f.write(header + "\n")
        for split, ds in (
            ("source_train", source),
            ("target_train", target_train),
            ("target_test", target_test),
        ):
            for row, y in zip(ds.features, ds.labels):
                values = ",".join(f"{v:.17g}" for v in row)
                f.write(f"{values},{int(y)},{split}\n")
