"""Dataset ingestion (MNIST IDX, CIFAR-10 binary) and normalization.

Files are parsed bit-exactly from the published binary layouts; pixel
values are scaled to [0, 1] before normalization.  ``unit-sample`` scales
every flattened sample to unit Euclidean norm; ``unit-pixel`` scales every
channel vector of an image to unit norm, mapping all-zero pixels to the
uniform unit vector so the convolutional kernel's per-pixel precondition
holds on sparse images.

The default data directory comes from the DEQNTK_DATA_DIR environment
variable; explicit paths always win.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

DATA_DIR_ENV = "DEQNTK_DATA_DIR"

UNIT_SAMPLE = "unit-sample"
UNIT_PIXEL = "unit-pixel"
NONE = "none"

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixels, channel-major

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    """Feature array (dense rows or image tensor) with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    normalization: str
    source: str


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx_images(raw: bytes, path: Path) -> np.ndarray:
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic {magic:#010x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated image data")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(
        n, rows * cols
    )


def _parse_idx_labels(raw: bytes, path: Path) -> np.ndarray:
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != _IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic {magic:#010x}")
    if len(raw) < 8 + n:
        raise DataFormatError(f"{path}: truncated label data")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(int)


def normalize_samples(features: np.ndarray) -> np.ndarray:
    flat = features.reshape(features.shape[0], -1).astype(float)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataFormatError("all-zero sample cannot be unit-normalized")
    return flat / norms


def normalize_pixels(images: np.ndarray) -> np.ndarray:
    """Unit channel vector per pixel; all-zero pixels become uniform."""
    out = images.astype(float).copy()
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    c = out.shape[-1]
    uniform = 1.0 / np.sqrt(c)
    zero = norms == 0
    out = np.where(zero, uniform, out / np.where(zero, 1.0, norms))
    return out


def _resolve(path, split_files, source_name) -> Path:
    if path is not None:
        return Path(path)
    base = default_data_dir()
    if base is None:
        raise DataFormatError(
            f"no path given for {source_name} and {DATA_DIR_ENV} is not set"
        )
    return base


def load_idx_pair(images_path, labels_path, normalization: str = UNIT_SAMPLE) -> Dataset:
    """MNIST-style IDX image/label file pair, pixels scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _parse_idx_images(_read_bytes(images_path), images_path)
    labels = _parse_idx_labels(_read_bytes(labels_path), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    feats = images.astype(float) / 255.0
    if normalization == UNIT_SAMPLE:
        feats = normalize_samples(feats)
    elif normalization != NONE:
        raise ValueError(f"unsupported normalization {normalization!r} for IDX data")
    return Dataset(
        features=feats,
        labels=labels,
        normalization=normalization,
        source=str(images_path),
    )


def load_mnist(path=None, split: str = "train", normalization: str = UNIT_SAMPLE) -> Dataset:
    """IDX files under ``path`` (a directory, or the env default directory)."""
    base = _resolve(path, _MNIST_FILES, "MNIST")
    if base.is_file():
        raise DataFormatError("load_mnist expects a directory of IDX files")
    if split not in _MNIST_FILES:
        raise ValueError("split must be 'train' or 'test'")
    img_name, lab_name = _MNIST_FILES[split]
    candidates = [(base / img_name, base / lab_name),
                  (base / (img_name + ".gz"), base / (lab_name + ".gz"))]
    for img, lab in candidates:
        if img.exists() and lab.exists():
            return load_idx_pair(img, lab, normalization)
    raise DataFormatError(f"MNIST {split} IDX files not found under {base}")


def load_cifar10(path=None, normalization: str = UNIT_SAMPLE) -> Dataset:
    """CIFAR-10 binary batches: one file, or every data_batch_*.bin under a
    directory.  Features come back as 32 x 32 x 3 images in [0, 1] when
    normalization is unit-pixel, flattened rows otherwise."""
    target = _resolve(path, None, "CIFAR-10")
    if target.is_dir():
        files = sorted(target.glob("data_batch_*.bin")) or sorted(
            target.glob("*.bin")
        )
        if not files:
            raise DataFormatError(f"no CIFAR-10 batch files under {target}")
    else:
        files = [target]

    images, labels = [], []
    for f in files:
        raw = _read_bytes(f)
        if len(raw) % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{f}: size {len(raw)} is not a multiple of {_CIFAR_RECORD}"
            )
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        lab = arr[:, 0].astype(int)
        if np.any(lab > 9):
            raise DataFormatError(f"{f}: label exceeds 9")
        # channel-major records: 1024 red, 1024 green, 1024 blue
        img = arr[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(img)
        labels.append(lab)
    images = np.concatenate(images).astype(float) / 255.0
    labels = np.concatenate(labels)

    if normalization == UNIT_SAMPLE:
        feats = normalize_samples(images)
    elif normalization == UNIT_PIXEL:
        feats = normalize_pixels(images)
    elif normalization == NONE:
        feats = images
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return Dataset(
        features=feats,
        labels=labels,
        normalization=normalization,
        source=";".join(str(f) for f in files),
    )
