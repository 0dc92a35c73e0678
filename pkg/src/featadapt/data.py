"""Feature datasets: binary I/O, synthetic domain-shift generation, splitting
and batching.

Binary feature file (little-endian):

    magic "TABF" | u32 version=1 | u32 N | u32 d | u32 C | u8 has_labels |
    3 zero bytes | N*d float32 row-major features | N int32 labels (optional)

A sidecar JSON manifest ``<path>.json`` with keys name/n/d/c/labeled is
written next to each file for human inspection; the binary file is always
authoritative for the payload.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .mathcore import make_rng

MAGIC = b"TABF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")  # magic, version, N, d, C, has_labels, pad


@dataclass
class FeatureDataset:
    """N feature vectors of dimension d, optionally labeled over C classes.

    Features are held in float64 but are always exact widenings of the
    float32 values the file format stores, so save/load round-trips are
    lossless.
    """

    features: np.ndarray
    labels: np.ndarray | None
    num_classes: int
    domain_name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise InvalidArgument(f"features must be a nonempty matrix, got shape {self.features.shape}")
        if self.num_classes < 1:
            raise InvalidArgument("num_classes must be >= 1")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise InvalidArgument("labels length must match the number of rows")
            if (self.labels < 0).any() or (self.labels >= self.num_classes).any():
                raise InvalidArgument("labels must lie in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None


@dataclass
class SynthShiftConfig:
    """Synthetic source/target pair: Gaussian class clusters, with the target
    produced by rotating the class means in random disjoint coordinate planes
    and translating them, then resampling with its own noise level."""

    num_classes: int = 10
    feature_dim: int = 32
    samples_per_class_source: int = 200
    samples_per_class_target: int = 200
    cluster_stddev: float = 0.25
    rotation_angle: float = 0.5
    translation_scale: float = 1.0
    noise_scale_target: float = 0.25
    seed: int = 0

    def validate(self):
        if self.num_classes < 1 or self.feature_dim < 1:
            raise InvalidArgument("num_classes and feature_dim must be >= 1")
        if self.samples_per_class_source < 1 or self.samples_per_class_target < 1:
            raise InvalidArgument("samples per class must be >= 1")
        if self.cluster_stddev < 0 or self.noise_scale_target < 0:
            raise InvalidArgument("stddevs must be >= 0")


@dataclass
class BatchPlan:
    """Ordered index slices into a dataset."""

    batches: list[np.ndarray]
    batch_size: int
    drop_singletons: bool = False

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def save_dataset(ds: FeatureDataset, path) -> None:
    """Write the binary feature file plus its JSON manifest."""
    path = Path(path)
    has_labels = 1 if ds.labeled else 0
    payload = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, ds.n, ds.dim, ds.num_classes, has_labels))
    payload += ds.features.astype("<f4").tobytes(order="C")
    if ds.labeled:
        payload += ds.labels.astype("<i4").tobytes()
    path.write_bytes(bytes(payload))
    manifest = {"name": ds.domain_name, "n": ds.n, "d": ds.dim, "c": ds.num_classes, "labeled": ds.labeled}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(path) -> FeatureDataset:
    """Read a binary feature file, validating magic, version and payload size.

    The domain name comes from the sidecar manifest when present (it is not
    stored in the binary payload), otherwise from the file stem.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header in {path.name}: {len(raw)} of {_HEADER.size} bytes", offset=len(raw))
    magic, version, n, d, c, has_labels = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if n < 1:
        raise FormatError("declared N must be >= 1", offset=8)
    if d < 1:
        raise FormatError("declared d must be >= 1", offset=12)
    if c < 1:
        raise FormatError("declared C must be >= 1", offset=16)
    if has_labels not in (0, 1):
        raise FormatError(f"has_labels byte must be 0 or 1, got {has_labels}", offset=20)

    feat_bytes = n * d * 4
    label_bytes = n * 4 if has_labels else 0
    expected = _HEADER.size + feat_bytes + label_bytes
    if len(raw) < expected:
        raise FormatError(
            f"truncated payload in {path.name}: file declares N={n}, d={d} but ends early",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise FormatError(f"trailing bytes after payload in {path.name}", offset=expected)

    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size)
    features = features.reshape(n, d).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=_HEADER.size + feat_bytes).astype(np.int64)
        bad = np.nonzero((labels < 0) | (labels >= c))[0]
        if bad.size:
            i = int(bad[0])
            raise FormatError(
                f"label {int(labels[i])} out of range [0, {c}) at row {i}",
                offset=_HEADER.size + feat_bytes + i * 4,
            )

    name = path.stem
    manifest_path = Path(str(path) + ".json")
    if manifest_path.exists():
        try:
            name = str(json.loads(manifest_path.read_text()).get("name", name))
        except (OSError, json.JSONDecodeError):
            pass
    return FeatureDataset(features=features, labels=labels, num_classes=c, domain_name=name)


def _rotate_in_planes(X: np.ndarray, plane_pairs: np.ndarray, angle: float) -> np.ndarray:
    """Rotate rows of X by `angle` within each disjoint coordinate plane."""
    out = X.copy()
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    for i, j in plane_pairs:
        xi, xj = X[:, i], X[:, j]
        out[:, i] = cos_a * xi - sin_a * xj
        out[:, j] = sin_a * xi + cos_a * xj
    return out


def synth_domain_pair(cfg: SynthShiftConfig) -> tuple[FeatureDataset, FeatureDataset]:
    """Generate a labeled source/target dataset pair with a controlled shift.

    Source: C Gaussian clusters around random unit-norm means scaled by
    4 * cluster_stddev. Target: the same class means pushed through a fixed
    random rotation (rotation_angle in floor(d/2) disjoint coordinate planes)
    plus a translation of norm translation_scale, resampled with
    noise_scale_target. Target labels are kept for evaluation only.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    C, d = cfg.num_classes, cfg.feature_dim

    means = rng.standard_normal((C, d))
    means /= np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    means *= 4.0 * cfg.cluster_stddev

    perm = rng.permutation(d)
    plane_pairs = perm[: 2 * (d // 2)].reshape(-1, 2)
    direction = rng.standard_normal(d)
    direction /= max(np.linalg.norm(direction), 1e-12)
    translation = cfg.translation_scale * direction

    target_means = _rotate_in_planes(means, plane_pairs, cfg.rotation_angle) + translation

    def sample(class_means, per_class, stddev):
        rows, labels = [], []
        for c in range(C):
            noise = rng.standard_normal((per_class, d))
            rows.append(class_means[c] + stddev * noise)
            labels.append(np.full(per_class, c, dtype=np.int64))
        X = np.concatenate(rows)
        # Store-exact: keep features identical to their float32 file encoding.
        X = X.astype(np.float32).astype(np.float64)
        return X, np.concatenate(labels)

    Xs, ys = sample(means, cfg.samples_per_class_source, cfg.cluster_stddev)
    Xt, yt = sample(target_means, cfg.samples_per_class_target, cfg.noise_scale_target)
    source = FeatureDataset(Xs, ys, C, domain_name=f"synth-source-{cfg.seed}")
    target = FeatureDataset(Xt, yt, C, domain_name=f"synth-target-{cfg.seed}")
    return source, target


def split(ds: FeatureDataset, train_fraction: float, rng: np.random.Generator) -> tuple[FeatureDataset, FeatureDataset]:
    """Stratified split: per class, ceil(train_fraction * n_c) rows go to the
    training half, the remainder to validation."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgument("train_fraction must lie in (0, 1)")
    if not ds.labeled:
        raise InvalidArgument("split requires a labeled dataset")
    train_idx, val_idx = [], []
    for c in range(ds.num_classes):
        idx = np.nonzero(ds.labels == c)[0]
        if idx.size < 2:
            raise InvalidArgument(f"stratified split needs >= 2 samples per class, class {c} has {idx.size}")
        idx = rng.permutation(idx)
        # The 1e-9 slack absorbs float noise like 0.2 * 5 = 1.0000000000000002.
        n_train = int(math.ceil(train_fraction * idx.size - 1e-9))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(idx[:n_train])
        val_idx.append(idx[n_train:])
    train_idx = np.concatenate(train_idx)
    val_idx = np.concatenate(val_idx)

    def take(idx):
        return FeatureDataset(ds.features[idx], ds.labels[idx], ds.num_classes, ds.domain_name)

    return take(train_idx), take(val_idx)


def make_batches(
    n: int,
    batch_size: int,
    shuffle: bool,
    drop_singletons: bool,
    rng: np.random.Generator | None = None,
) -> BatchPlan:
    """Contiguous slices of a (possibly shuffled) permutation of [0, n).

    batch_size must be >= 2: the batch-mean diversity term of the adaptation
    loss is degenerate on singletons. When drop_singletons is set, a trailing
    slice of size 1 is dropped.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if batch_size < 2:
        raise InvalidArgument("batch_size must be >= 2")
    if shuffle:
        if rng is None:
            raise InvalidArgument("shuffle requires an rng")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if drop_singletons and batches and batches[-1].size == 1:
        batches.pop()
    return BatchPlan(batches=batches, batch_size=batch_size, drop_singletons=drop_singletons)
