"""Dataset generation and ingestion.

Three sources: deterministic synthetic Gaussian clusters, labelled CSV
vectors, and the standard CIFAR-10 binary batches (flattened to 3072-dim
vectors). Labels ride along for the kNN probe only; the training path
never reads them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes
_CSV_SPLIT_SEED = 0xDA7A
_TRAIN_FRACTION = 0.8

# Reference 8-cluster dataset used by the pilot training runs; with this
# seed every pair of cluster centers is more than 4 sigma apart.
PILOT_SEED = 20240811


class DataFormatError(ValueError):
    """Input file violates the expected CSV or binary layout."""


@dataclass(frozen=True)
class DatasetHandle:
    """Immutable sample/label store with a train/eval partition."""

    samples: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    eval_idx: np.ndarray

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be (n, dim), got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must align with samples")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.samples[self.train_idx], self.labels[self.train_idx]

    @property
    def eval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.samples[self.eval_idx], self.labels[self.eval_idx]


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters around centers drawn on a sphere."""

    num_clusters: int = 8
    input_dim: int = 64
    per_cluster: int = 250
    center_scale: float = 1.0
    sigma: float = 0.3
    seed: int = PILOT_SEED

    def __post_init__(self):
        if self.num_clusters < 2:
            raise ValueError(f"need at least 2 clusters, got {self.num_clusters}")
        if self.input_dim < 2:
            raise ValueError(f"need input_dim >= 2, got {self.input_dim}")
        if self.per_cluster < 1:
            raise ValueError(f"need per_cluster >= 1, got {self.per_cluster}")


def pilot_spec() -> SyntheticSpec:
    """The committed 8-cluster reference dataset."""
    return SyntheticSpec()


def _split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    cut = int(round(_TRAIN_FRACTION * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def gen_synthetic(spec: SyntheticSpec) -> DatasetHandle:
    """Sample the clusters and split 80/20 by a deterministic shuffle."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.num_clusters, spec.input_dim))
    centers *= spec.center_scale / np.linalg.norm(centers, axis=1, keepdims=True)
    n = spec.num_clusters * spec.per_cluster
    labels = np.repeat(np.arange(spec.num_clusters), spec.per_cluster)
    noise = rng.standard_normal((n, spec.input_dim)) * spec.sigma
    samples = centers[labels] + noise
    train_idx, eval_idx = _split_indices(n, rng)
    return DatasetHandle(samples, labels.astype(np.int64), train_idx, eval_idx)


def _parse_float(field: str, lineno: int, path) -> float:
    try:
        return float(field)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}: non-numeric value {field!r}") from None


def load_csv(path) -> DatasetHandle:
    """Read `label,v0,...,v{D-1}` rows; a header is detected by a
    non-numeric first field and skipped. Ragged rows are format errors."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    labels: list[int] = []
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue  # header row
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"{path}: line {lineno}: need a label plus values")
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            labels.append(int(_parse_float(row[0], lineno, path)))
            rows.append([_parse_float(f, lineno, path) for f in row[1:]])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    samples = np.asarray(rows, dtype=np.float64)
    rng = np.random.default_rng(_CSV_SPLIT_SEED)
    train_idx, eval_idx = _split_indices(len(rows), rng)
    return DatasetHandle(samples, np.asarray(labels, dtype=np.int64), train_idx, eval_idx)


def save_csv(handle: DatasetHandle, path) -> None:
    """Write the dataset back out at 17 significant digits (lossless for
    float64 round-trips). The split is not stored; loaders re-derive it."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"v{i}" for i in range(handle.input_dim)])
        for label, row in zip(handle.labels, handle.samples):
            writer.writerow([int(label)] + [f"{v:.17g}" for v in row])


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    blob = path.read_bytes()
    if len(blob) == 0 or len(blob) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(blob)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return pixels, labels


def load_cifar10_bin(directory) -> DatasetHandle:
    """Load CIFAR-10 binary batches from a directory.

    data_batch_*.bin files form the training split and test_batch.bin (when
    present) the evaluation split; otherwise the loaded records get the
    deterministic 80/20 split. Pixels are scaled to [0, 1] and standardized
    per channel with constants computed from the training split.
    """
    directory = Path(directory)
    train_files = sorted(directory.glob("data_batch_*.bin"))
    if not train_files:
        raise FileNotFoundError(f"no data_batch_*.bin files in {directory}")
    parts = [_read_cifar_file(p) for p in train_files]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])

    test_path = directory / "test_batch.bin"
    if test_path.exists():
        test_x, test_y = _read_cifar_file(test_path)
        samples = np.concatenate([train_x, test_x])
        labels = np.concatenate([train_y, test_y])
        train_idx = np.arange(len(train_x))
        eval_idx = np.arange(len(train_x), len(samples))
    else:
        samples, labels = train_x, train_y
        rng = np.random.default_rng(_CSV_SPLIT_SEED)
        train_idx, eval_idx = _split_indices(len(samples), rng)

    # Channel blocks are contiguous: 1024 R, 1024 G, 1024 B values per row.
    ref = samples[train_idx]
    for ch in range(3):
        block = slice(1024 * ch, 1024 * (ch + 1))
        mean = ref[:, block].mean()
        std = max(ref[:, block].std(), 1e-8)
        samples[:, block] = (samples[:, block] - mean) / std
    return DatasetHandle(samples, labels, train_idx, eval_idx)
