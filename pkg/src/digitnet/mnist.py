"""IDX file parsing and deterministic batching for MNIST-style data.

IDX layout: a 4-byte big-endian magic ``0x0000TTNN`` (TT = element type,
0x08 for unsigned bytes; NN = number of dimensions), NN big-endian uint32
sizes, then the row-major payload.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError, UserError
from .tensor import DTYPE, SeededRng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_NDIMS = {IMAGES_MAGIC: 3, LABELS_MAGIC: 1}
NUM_CLASSES = 10

FILENAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class RawIdx:
    magic: int
    dims: tuple
    payload: np.ndarray  # uint8, flat


def parse_idx(data: bytes) -> RawIdx:
    if len(data) < 8:
        raise FormatError(f"IDX stream too short: {len(data)} bytes, need at least 8")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in _NDIMS:
        raise FormatError(f"bad IDX magic 0x{magic:08X} (expected 0x00000803 or 0x00000801)")
    ndim = _NDIMS[magic]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"IDX header truncated: expected {header} bytes, got {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    actual = len(data) - header
    if actual != expected:
        raise FormatError(f"IDX payload length mismatch: expected {expected} bytes, got {actual}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    return RawIdx(magic, tuple(dims), payload)


def serialize_idx(raw: RawIdx) -> bytes:
    return struct.pack(f">I{len(raw.dims)}I", raw.magic, *raw.dims) + np.asarray(raw.payload, np.uint8).tobytes()


def read_idx(path) -> RawIdx:
    """Read a raw or gzip-compressed IDX file (detected by its signature)."""
    if not os.path.exists(path):
        raise UserError(f"data file not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise FormatError(f"{path}: corrupt gzip stream ({e})") from None
    try:
        return parse_idx(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def write_idx(path, raw: RawIdx, compress=None):
    data = serialize_idx(raw)
    if compress is None:
        compress = str(path).endswith(".gz")
    if compress:
        # mtime=0 keeps the output byte-identical across runs
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as fh:
        fh.write(data)


def normalize(pixels) -> np.ndarray:
    return np.asarray(pixels, dtype=DTYPE) / 255.0


def one_hot(label, num_classes=NUM_CLASSES) -> np.ndarray:
    labels = np.asarray(label)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"label out of range 0..{num_classes - 1}: {label}")
    out = np.zeros(labels.shape + (num_classes,), dtype=DTYPE)
    np.put_along_axis(out, labels.astype(np.int64)[..., None], 1.0, axis=-1)
    return out


@dataclass
class Dataset:
    images: np.ndarray  # [N, 28, 28, 1] float64 in [0, 1]
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        self.onehot = one_hot(self.labels)

    def __len__(self):
        return len(self.labels)

    def subset(self, limit):
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.images[:limit], self.labels[:limit])

    def split(self, n):
        return Dataset(self.images[:n], self.labels[:n]), Dataset(self.images[n:], self.labels[n:])


def dataset_from_idx(images: RawIdx, labels: RawIdx) -> Dataset:
    if images.magic != IMAGES_MAGIC:
        raise FormatError(f"expected an image file (magic 0x00000803), got 0x{images.magic:08X}")
    if labels.magic != LABELS_MAGIC:
        raise FormatError(f"expected a label file (magic 0x00000801), got 0x{labels.magic:08X}")
    n, h, w = images.dims
    if labels.dims[0] != n:
        raise FormatError(f"{n} images but {labels.dims[0]} labels")
    lab = labels.payload.astype(np.int64)
    if lab.size and lab.max() >= NUM_CLASSES:
        raise FormatError(f"label value {lab.max()} outside 0..9")
    return Dataset(normalize(images.payload).reshape(n, h, w, 1), lab)


def load_dataset(images_path, labels_path) -> Dataset:
    return dataset_from_idx(read_idx(images_path), read_idx(labels_path))


def find_split(directory, split) -> tuple[str, str]:
    """Locate ``<split>`` image/label files in ``directory``, raw or ``.gz``."""
    paths = []
    for kind in ("images", "labels"):
        base = os.path.join(directory, FILENAMES[f"{split}_{kind}"])
        for candidate in (base, base + ".gz"):
            if os.path.exists(candidate):
                paths.append(candidate)
                break
        else:
            raise UserError(f"missing {split} {kind}: {base}[.gz]")
    return paths[0], paths[1]


def load_split(directory, split) -> Dataset:
    return load_dataset(*find_split(directory, split))


@dataclass
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = False
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")

    def order(self, n) -> np.ndarray:
        if not self.shuffle:
            return np.arange(n)
        return SeededRng(self.seed).permutation(n)


def batches(dataset: Dataset, plan: BatchPlan):
    """Yield ``(images, onehot, labels)`` batches covering each sample once."""
    n = len(dataset)
    order = plan.order(n)
    for start in range(0, n, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size:
            break
        yield dataset.images[idx], dataset.onehot[idx], dataset.labels[idx]
