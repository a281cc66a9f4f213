"""Dataset ingestion (MNIST IDX, CIFAR-10 binary), subsets and checkpoints."""

from __future__ import annotations

import gzip
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    CheckpointVersionError,
    DatasetFormatError,
    LabelRangeError,
    ShapeError,
    TruncatedFileError,
)
from .zoo import ArchConfig, Classifier, build_model

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

CHECKPOINT_MAGIC = b"CPRB"
CHECKPOINT_VERSION = 1


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    num_classes: int = 10
    indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes, self.indices[idx])


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, expect_magic: int, path: Path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def _idx_pair(path: Path, split: str) -> tuple[Path, Path]:
    if path.is_dir():
        prefix = {"train": "train", "test": "t10k"}.get(split, split)
        for suffix in ("", ".gz"):
            img = path / f"{prefix}-images-idx3-ubyte{suffix}"
            lab = path / f"{prefix}-labels-idx1-ubyte{suffix}"
            if img.exists() and lab.exists():
                return img, lab
        raise FileNotFoundError(f"no {prefix}-images/labels IDX pair in {path}")
    name = path.name
    if "images-idx3" not in name:
        raise DatasetFormatError(f"{path}: expected an '*-images-idx3-ubyte' file or a directory")
    return path, path.with_name(name.replace("images-idx3", "labels-idx1"))


def load_idx(path, split: str = "train", num_classes: int = 10) -> Dataset:
    img_path, lab_path = _idx_pair(Path(path), split)
    images = _parse_idx(_read_bytes(img_path), IDX_IMAGES_MAGIC, img_path)
    labels = _parse_idx(_read_bytes(lab_path), IDX_LABELS_MAGIC, lab_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{img_path}: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= num_classes:
        raise LabelRangeError(f"{lab_path}: label {labels.max()} outside [0, {num_classes})")
    images = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(images, labels.astype(np.int64), split, num_classes)


def _cifar_files(path: Path, split: str) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(path)
    if split == "test":
        names = ["test_batch.bin"]
    else:
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    found = [path / n for n in names if (path / n).exists()]
    if not found:
        raise FileNotFoundError(f"no CIFAR-10 {split} batch files in {path}")
    return found


def load_cifar(path, split: str = "train", num_classes: int = 10) -> Dataset:
    images, labels = [], []
    for f in _cifar_files(Path(path), split):
        raw = _read_bytes(f)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise TruncatedFileError(f"{f}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0]
        if lab.max() >= num_classes:
            raise LabelRangeError(f"{f}: label {lab.max()} outside [0, {num_classes})")
        labels.append(lab.astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(np.concatenate(images), np.concatenate(labels), split, num_classes)


def load_dataset(path, format: str, split: str = "train", num_classes: int = 10) -> Dataset:
    """Load MNIST-style IDX files (``format='idx'``) or CIFAR-10 binary batches."""
    if format == "idx":
        return load_idx(path, split, num_classes)
    if format in ("cifar", "cifar-binary"):
        return load_cifar(path, split, num_classes)
    raise ValueError(f"unknown dataset format {format!r}")


def subset_indices(size: int, n: int, seed: int) -> np.ndarray:
    """First ``n`` entries of a seeded Fisher-Yates shuffle of ``range(size)``."""
    if n > size:
        raise ValueError(f"subset of {n} requested from {size} samples")
    if n < 0:
        raise ValueError("subset size must be non-negative")
    perm = np.arange(size)
    rng = np.random.default_rng(seed)
    for i in range(min(n, size - 1)):
        j = int(rng.integers(i, size))
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:n]


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    idx = subset_indices(len(ds), n, seed)
    out = ds.take(idx)
    logger.info("subset of %d samples, class counts %s", n, out.class_counts().tolist())
    return out


# -- checkpoints --------------------------------------------------------------------
def save_checkpoint(model: Classifier, path, epoch: int = 0, extra: dict | None = None) -> Path:
    """Write ``CPRB | u32 version | u32 header_len | JSON header | float32 LE blobs``."""
    path = Path(path)
    state = model.state_dict()
    header = {
        "arch": model.config.to_dict(),
        "epoch": int(epoch),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in state.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)
    return path


@dataclass
class Checkpoint:
    model: Classifier
    epoch: int
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, supported {CHECKPOINT_VERSION}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        config = ArchConfig.from_dict(header["arch"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    model = build_model(config)
    own = model.state_dict()
    offset = 12 + hlen
    state = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in own:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} for arch {config.arch}")
        if shape != own[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, arch config expects {own[name].shape}")
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data for {name}")
        state[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, int(header["epoch"]), header.get("extra", {}))
