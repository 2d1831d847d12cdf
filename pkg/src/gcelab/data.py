"""MNIST IDX and CIFAR-10 binary loaders, seeded batching and subsetting."""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

DATA_ENV = "GCELAB_DATA"


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray          # N x C x H x W, float64 in [0, 1]
    labels: np.ndarray          # N, int64
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def checksum(self) -> str:
        """Combined sha256 of the raw source files (or of the arrays when built in memory)."""
        sums = self.provenance.get("sha256")
        if sums:
            return hashlib.sha256("".join(sums).encode()).hexdigest()[:16]
        h = hashlib.sha256(self.images.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def read_idx(raw: bytes, expected_magic: int, path="<bytes>") -> np.ndarray:
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DataFormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (used by tests and fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist_idx(image_path, label_path, split: str = "train") -> Dataset:
    img_raw, lab_raw = _read_bytes(image_path), _read_bytes(label_path)
    images = read_idx(img_raw, IDX_IMAGES_MAGIC, image_path)
    labels = read_idx(lab_raw, IDX_LABELS_MAGIC, label_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset(
        images=images.reshape(images.shape[0], 1, *images.shape[1:]).astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        split=split,
        provenance={"paths": [str(image_path), str(label_path)],
                    "sha256": [_sha256(img_raw), _sha256(lab_raw)]},
    )


def load_cifar10_bin(paths: Sequence, split: str = "train") -> Dataset:
    images, labels, sums = [], [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
        sums.append(_sha256(raw))
    if not images:
        raise DataFormatError("no CIFAR-10 files given")
    return Dataset(np.concatenate(images), np.concatenate(labels), split,
                   {"paths": [str(p) for p in paths], "sha256": sums})


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"{stem} not found under {root} (set {DATA_ENV})")


def load_mnist(split: str, root=None) -> Dataset:
    """Load the standard MNIST files from ``root`` (default ``$GCELAB_DATA/mnist``)."""
    root = Path(root) if root else data_dir() / "mnist"
    prefix = "train" if split == "train" else "t10k"
    return load_mnist_idx(_find(root, f"{prefix}-images-idx3-ubyte"),
                          _find(root, f"{prefix}-labels-idx1-ubyte"), split)


def load_cifar10(split: str, root=None) -> Dataset:
    root = Path(root) if root else data_dir() / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    return load_cifar10_bin([root / n for n in names], split)


def load_dataset(name: str, split: str, root=None) -> Dataset:
    if name == "mnist":
        return load_mnist(split, root)
    if name == "cifar10":
        return load_cifar10(split, root)
    raise ValueError(f"unknown dataset {name!r}")


def permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[tuple]:
    """Yield ``(images, labels)`` in a seeded per-epoch order; last partial batch kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = permutation(len(dataset), seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded subset; class-stratified when ``n`` divides evenly across classes."""
    if n < 1:
        raise ValueError("subset size must be >= 1")
    if n > len(dataset):
        raise ValueError(f"subset size {n} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(seed)
    classes = np.unique(dataset.labels)
    per_class = n // len(classes)
    counts = np.bincount(dataset.labels)
    if n % len(classes) == 0 and np.all(counts[classes] >= per_class):
        picks = [rng.permutation(np.flatnonzero(dataset.labels == c))[:per_class] for c in classes]
        idx = rng.permutation(np.concatenate(picks))
    else:
        idx = rng.permutation(len(dataset))[:n]
    prov = dict(dataset.provenance, subset={"n": n, "seed": seed})
    return Dataset(dataset.images[idx], dataset.labels[idx], dataset.split, prov)
