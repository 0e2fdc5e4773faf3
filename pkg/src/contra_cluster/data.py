"""Loaders for MNIST IDX files and MedMNIST NPZ archives."""
from __future__ import annotations

import struct
import zipfile
from dataclasses import dataclass

import numpy as np
from numpy.lib import format as npy_format

SPLITS = ("train", "val", "test")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """File content does not match the expected container format."""


class DataConsistencyError(ValueError):
    """Images and labels disagree (count mismatch, out-of-range label)."""


@dataclass(frozen=True)
class Dataset:
    """Grayscale images (N, 1, H, W) in [0, 1] with integer labels.

    Arrays are made read-only on construction so instances can be shared.
    """

    images: np.ndarray
    labels: np.ndarray
    split_tag: str
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DataConsistencyError(f"images must be (N, 1, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataConsistencyError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.split_tag not in SPLITS:
            raise ValueError(f"split_tag must be one of {SPLITS}")
        if self.class_count < 2:
            raise DataConsistencyError("class_count must be >= 2")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataConsistencyError("label outside [0, class_count)")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.split_tag, self.class_count)


def _class_count(labels, class_count):
    if class_count is not None:
        return int(class_count)
    return max(2, int(labels.max()) + 1) if len(labels) else 2


def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise OSError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise OSError(f"{path}: truncated IDX dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < count:
        raise OSError(f"{path}: payload has {len(raw) - head} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, split="train", class_count=None):
    """Read an IDX image file (magic 0x803) and label file (magic 0x801)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise DataFormatError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if len(images) != len(labels):
        raise DataConsistencyError(f"{len(images)} images but {len(labels)} labels")
    labels = labels.astype(np.int64)
    x = (images.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return Dataset(x, labels, split, _class_count(labels, class_count))


def write_idx(images_path, labels_path, images_u8, labels_u8):
    """Write uint8 images (N, H, W) and labels (N,) as IDX files."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images_u8.shape))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC))
        fh.write(struct.pack(">I", labels_u8.shape[0]))
        fh.write(labels_u8.tobytes())


def to_uint8(images):
    """Quantize [0, 1] images back to bytes (inverse of the x/255 scaling)."""
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def _read_npy_member(zf, name):
    with zf.open(name) as fh:
        version = npy_format.read_magic(fh)
        if version != (1, 0):
            raise DataFormatError(f"{name}: NPY version {version} unsupported (need 1.0)")
        shape, fortran, dtype = npy_format.read_array_header_1_0(fh)
        if dtype != np.dtype(np.uint8):
            raise DataFormatError(f"{name}: dtype {dtype} unsupported (need uint8)")
        count = int(np.prod(shape, dtype=np.int64))
        buf = fh.read(count)
    if len(buf) != count:
        raise OSError(f"{name}: truncated NPY payload")
    order = "F" if fortran else "C"
    return np.frombuffer(buf, dtype=np.uint8).reshape(shape, order=order)


def load_medmnist_npz(path, split, class_count=None):
    """Read ``<split>_images`` / ``<split>_labels`` from a MedMNIST-style NPZ."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise DataFormatError(f"{path}: not a ZIP/NPZ archive") from exc
    with zf:
        members = {}
        for info in zf.infolist():
            if info.compress_type not in (zipfile.ZIP_STORED, zipfile.ZIP_DEFLATED):
                raise DataFormatError(f"{path}: member {info.filename} uses unsupported compression")
            members[info.filename.removesuffix(".npy")] = info.filename
        wanted = {}
        for kind in ("images", "labels"):
            key = f"{split}_{kind}"
            if key not in members:
                raise DataFormatError(f"{path}: missing member {key}")
            wanted[kind] = _read_npy_member(zf, members[key])
    images, labels = wanted["images"], wanted["labels"]
    if labels.ndim == 2 and labels.shape[1] == 1:
        labels = labels[:, 0]
    elif labels.ndim != 1:
        raise DataFormatError(f"{path}: labels of shape {labels.shape} are not single-column")
    if images.ndim != 3:
        raise DataFormatError(f"{path}: images must be (N, H, W) grayscale, got {images.shape}")
    if len(images) != len(labels):
        raise DataConsistencyError(f"{len(images)} images but {len(labels)} labels")
    labels = labels.astype(np.int64)
    x = (images.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return Dataset(x, labels, split, _class_count(labels, class_count))


def subset(ds, fraction, seed):
    """Sample ``round(fraction * len)`` items without replacement, deterministically."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = int(round(fraction * len(ds)))
    if n < 1:
        raise ValueError(f"fraction {fraction} of {len(ds)} items is empty")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=n, replace=False)
    return ds.take(idx)


def head(ds, n):
    """First ``n`` items (used to build fixed-size desk-scale runs)."""
    return ds if n is None or n >= len(ds) else ds.take(np.arange(n))
