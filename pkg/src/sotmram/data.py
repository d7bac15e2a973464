"""MNIST ingestion from IDX files.

Image files start with the big-endian header (0x00000803, count, rows, cols)
followed by count*rows*cols unsigned bytes; label files start with
(0x00000801, count) followed by count bytes.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxFormatError(IdxError):
    pass


class IdxLengthError(IdxError):
    pass


class IdxLabelError(IdxError):
    pass


@dataclass(frozen=True)
class IdxImages:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # uint8, shape (count, rows, cols)

    def to_bytes(self) -> bytes:
        return struct.pack(">IIII", IMAGES_MAGIC, self.count, self.rows, self.cols) + \
            np.ascontiguousarray(self.pixels, dtype=np.uint8).tobytes()


@dataclass(frozen=True)
class IdxLabels:
    count: int
    labels: np.ndarray  # uint8, shape (count,)

    def to_bytes(self) -> bytes:
        return struct.pack(">II", LABELS_MAGIC, self.count) + \
            np.ascontiguousarray(self.labels, dtype=np.uint8).tobytes()


def _header(data: bytes, n_fields: int, magic: int) -> tuple[int, ...]:
    size = 4 * n_fields
    if len(data) < size:
        raise IdxLengthError(f"header needs {size} bytes, got {len(data)}")
    fields = struct.unpack(f">{n_fields}I", data[:size])
    if fields[0] != magic:
        raise IdxFormatError(f"bad magic number 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:]


def parse_idx_images(data: bytes) -> IdxImages:
    count, rows, cols = _header(data, 4, IMAGES_MAGIC)
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise IdxLengthError(f"image payload is {len(data)} bytes, header implies {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)
    return IdxImages(count, rows, cols, pixels)


def parse_idx_labels(data: bytes) -> IdxLabels:
    (count,) = _header(data, 2, LABELS_MAGIC)
    if len(data) != 8 + count:
        raise IdxLengthError(f"label payload is {len(data)} bytes, header implies {8 + count}")
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise IdxLabelError(f"label value {int(labels.max())} out of range 0-9")
    return IdxLabels(count, labels)


def read_bytes(path) -> bytes:
    """File contents, transparently gunzipped when the gzip magic is present."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({e})") from e
    return data


def normalize(images: IdxImages) -> np.ndarray:
    return images.pixels.reshape(images.count, images.rows * images.cols) / 255.0


def one_hot(labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(labels, dtype=np.int64)]


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        if len(self.train_x) != len(self.train_y) or len(self.test_x) != len(self.test_y):
            raise ValueError("image and label counts differ within a split")


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).is_file():
            return data_dir / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_split(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = parse_idx_images(read_bytes(images_path))
    labels = parse_idx_labels(read_bytes(labels_path))
    if images.count != labels.count:
        raise IdxLengthError(f"{images.count} images but {labels.count} labels")
    return normalize(images), labels.labels.astype(np.int64)


def load_mnist(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    paths = {key: _find(data_dir, stem) for key, stem in FILES.items()}
    train_x, train_y = load_split(paths["train_images"], paths["train_labels"])
    test_x, test_y = load_split(paths["test_images"], paths["test_labels"])
    return Dataset(train_x, train_y, test_x, test_y)


def default_data_dir() -> Path | None:
    env = os.environ.get("SOTMRAM_DATA_DIR")
    return Path(env) if env else None


def batches(x: np.ndarray, y: np.ndarray, batch_size: int, seed,
            num_classes: int = NUM_CLASSES) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled (inputs, one-hot targets) batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.random.default_rng(seed).permutation(len(x))
    return [(x[idx], one_hot(y[idx], num_classes)) for idx in
            (order[i:i + batch_size] for i in range(0, len(order), batch_size))]
