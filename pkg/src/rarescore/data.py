"""MNIST-style dataset handling: bit-exact IDX files, parity relabeling,
seeded rarefaction and oversampling.

Filenames ending in ``.gz`` are read and written through gzip
transparently; everything else is raw IDX bytes.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .rng import SplitMix64

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

PARITY_CLASS_NAMES = ("even", "odd")


@dataclass
class LabeledDataset:
    """Images with class labels, subclass tags and stable sample ids.

    For MNIST parity work the class is even/odd and the subclass tag is the
    original digit; all four arrays are index-aligned.
    """

    images: np.ndarray  # (S, 28, 28) uint8
    class_labels: np.ndarray  # (S,) int64
    subclass_tags: np.ndarray  # (S,) int64
    sample_ids: np.ndarray  # (S,) uint64, unique
    class_names: tuple[str, ...] = PARITY_CLASS_NAMES

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.subclass_tags = np.asarray(self.subclass_tags, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.uint64)
        s = len(self.images)
        for name in ("class_labels", "subclass_tags", "sample_ids"):
            if len(getattr(self, name)) != s:
                raise ValueError(f"{name} length differs from image count {s}")
        if len(np.unique(self.sample_ids)) != s:
            raise ValueError("sample_ids must be unique")
        k = len(self.class_names)
        if s and (self.class_labels.min() < 0 or self.class_labels.max() >= k):
            raise ValueError(f"class labels must lie in 0..{k - 1}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def k(self) -> int:
        return len(self.class_names)

    def features(self) -> np.ndarray:
        """Flattened pixels scaled to [0, 1], float64."""
        return self.images.reshape(len(self), -1).astype(np.float64) / 255.0

    def take(self, mask_or_indices) -> "LabeledDataset":
        return replace(
            self,
            images=self.images[mask_or_indices],
            class_labels=self.class_labels[mask_or_indices],
            subclass_tags=self.subclass_tags[mask_or_indices],
            sample_ids=self.sample_ids[mask_or_indices],
        )


def _open_read(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _open_write(path):
    if str(path).endswith(".gz"):
        # fixed mtime so identical tensors give identical .gz bytes
        return gzip.GzipFile(path, "wb", mtime=0)
    return open(path, "wb")


def _be32(data: bytes, offset: int, path, what: str) -> int:
    if len(data) < offset + 4:
        raise FormatError(f"{path}: truncated before {what}")
    return int.from_bytes(data[offset:offset + 4], "big")


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a (count, rows, cols) uint8 tensor."""
    with _open_read(path) as f:
        data = f.read()
    magic = _be32(data, 0, path, "magic")
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: image magic must be {IMAGE_MAGIC}, got {magic}")
    count = _be32(data, 4, path, "count")
    rows = _be32(data, 8, path, "rows")
    cols = _be32(data, 12, path, "cols")
    expected = count * rows * cols
    actual = len(data) - 16
    if actual != expected:
        raise FormatError(
            f"{path}: expected {expected} payload bytes for {count}x{rows}x{cols}, found {actual}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a (count,) uint8 vector of digits 0-9."""
    with _open_read(path) as f:
        data = f.read()
    magic = _be32(data, 0, path, "magic")
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: label magic must be {LABEL_MAGIC}, got {magic}")
    count = _be32(data, 4, path, "count")
    actual = len(data) - 8
    if actual != count:
        raise FormatError(f"{path}: expected {count} label bytes, found {actual}")
    labels = np.frombuffer(data, dtype=np.uint8, offset=8).copy()
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label byte {int(labels.max())} out of range 0-9")
    return labels


def write_idx(array: np.ndarray, path) -> None:
    """Write images (3-D uint8) or labels (1-D uint8) in IDX layout."""
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim == 3:
        count, rows, cols = arr.shape
        header = (
            IMAGE_MAGIC.to_bytes(4, "big")
            + count.to_bytes(4, "big")
            + rows.to_bytes(4, "big")
            + cols.to_bytes(4, "big")
        )
    elif arr.ndim == 1:
        if arr.size and arr.max() > 9:
            raise ValueError(f"label value {int(arr.max())} out of range 0-9")
        header = LABEL_MAGIC.to_bytes(4, "big") + arr.shape[0].to_bytes(4, "big")
    else:
        raise ValueError("write_idx takes a 3-D image tensor or 1-D label vector")
    try:
        with _open_write(path) as f:
            f.write(header + arr.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def parity_labels(digit_labels) -> tuple[np.ndarray, np.ndarray]:
    """Even/odd class labels plus the digits kept as subclass tags."""
    digits = np.asarray(digit_labels, dtype=np.int64)
    if digits.size and (digits.min() < 0 or digits.max() > 9):
        bad = int(digits.min()) if digits.min() < 0 else int(digits.max())
        raise ValueError(f"digit {bad} out of range 0-9")
    return digits % 2, digits.copy()


def _resolve(data_dir, name: str):
    from pathlib import Path

    base = Path(data_dir)
    for candidate in (base / name, base / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{base / name}[.gz] not found")


def load_mnist_split(data_dir, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Load (images, digit_labels) for 'train' or 'test' from a directory
    holding the four standard MNIST file names (optionally gzipped)."""
    if split == "train":
        img_name, lab_name = TRAIN_IMAGES, TRAIN_LABELS
    elif split == "test":
        img_name, lab_name = TEST_IMAGES, TEST_LABELS
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    images = read_idx_images(_resolve(data_dir, img_name))
    labels = read_idx_labels(_resolve(data_dir, lab_name))
    if len(images) != len(labels):
        raise FormatError(
            f"{data_dir}: {len(images)} images but {len(labels)} labels for split {split!r}"
        )
    return images, labels


def parity_dataset(images: np.ndarray, digits: np.ndarray, id_offset: int = 0) -> LabeledDataset:
    """Assemble a parity-labeled dataset with ids offset..offset+S-1."""
    class_labels, subclass = parity_labels(digits)
    ids = np.arange(id_offset, id_offset + len(images), dtype=np.uint64)
    return LabeledDataset(images, class_labels, subclass, ids)


def load_parity_split(data_dir, split: str) -> LabeledDataset:
    images, digits = load_mnist_split(data_dir, split)
    return parity_dataset(images, digits)


@dataclass(frozen=True)
class RarefactionSpec:
    """Synthetic rare-subclass recipe: drop each sample of one digit with a
    fixed probability."""

    target_digit: int
    drop_probability: float
    seed: int

    def __post_init__(self):
        if not 0 <= self.target_digit <= 9:
            raise ValueError("target_digit must be in 0..9")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")


def rarify(dataset: LabeledDataset, spec: RarefactionSpec) -> LabeledDataset:
    """Drop each target-digit sample independently with the spec probability.

    One uniform draw per target sample, in dataset order, from a
    SplitMix64(seed) stream; a sample is dropped when draw < p. Non-target
    samples are untouched and order is preserved.
    """
    rng = SplitMix64(spec.seed)
    target_rows = np.flatnonzero(dataset.subclass_tags == spec.target_digit)
    keep = np.ones(len(dataset), dtype=bool)
    if target_rows.size:
        draws = rng.float_array(target_rows.size)
        keep[target_rows[draws < spec.drop_probability]] = False
    return dataset.take(keep)


def oversample(
    dataset: LabeledDataset, selected_ids, added_count: int, seed: int
) -> LabeledDataset:
    """Append added_count verbatim copies drawn uniformly (with replacement)
    from the selected sample ids.

    Draw t picks sorted(selected_ids)[floor(u_t * len)] with u_t from a
    SplitMix64(seed) stream. Copies get fresh ids continuing from the
    current maximum id + 1; originals are untouched.
    """
    ids = sorted(int(i) for i in set(selected_ids))
    if not ids:
        raise ValueError("oversample needs a non-empty id selection")
    id_to_row = {int(i): r for r, i in enumerate(dataset.sample_ids)}
    missing = [i for i in ids if i not in id_to_row]
    if missing:
        raise ValueError(f"selected ids not present in dataset: {missing[:5]}")
    if added_count == 0:
        return dataset
    if added_count < 0:
        raise ValueError("added_count must be non-negative")
    rng = SplitMix64(seed)
    draws = rng.float_array(added_count)
    picks = np.minimum((draws * len(ids)).astype(np.int64), len(ids) - 1)
    rows = np.array([id_to_row[ids[p]] for p in picks], dtype=np.int64)
    next_id = int(dataset.sample_ids.max()) + 1 if len(dataset) else 0
    new_ids = np.arange(next_id, next_id + added_count, dtype=np.uint64)
    return replace(
        dataset,
        images=np.concatenate([dataset.images, dataset.images[rows]]),
        class_labels=np.concatenate([dataset.class_labels, dataset.class_labels[rows]]),
        subclass_tags=np.concatenate([dataset.subclass_tags, dataset.subclass_tags[rows]]),
        sample_ids=np.concatenate([dataset.sample_ids, new_ids]),
    )
