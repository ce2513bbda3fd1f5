"""Datasets: 2-D benchmark generators, zero-padding, CSV and MNIST IDX files."""
from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    M: int
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError(f"features {self.X.shape} do not match {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.M):
            raise ValueError(f"labels must lie in [0, {self.M})")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.M, self.name)


def standardize(X):
    X = np.asarray(X, dtype=np.float64)
    return (X - X.mean(axis=0)) / X.std(axis=0)


def _check_even(s):
    if s <= 0 or s % 2:
        raise ValueError(f"sample count must be a positive even number, got {s}")


def gen_double_moons(s, noise_std=0.1, seed=0, standardized=True) -> Dataset:
    """Two interleaved unit half circles.

    Class 0 lies on ``(cos t, sin t)``, class 1 on ``(1 - cos t, 0.5 - sin t)``
    with ``t`` uniform on ``[0, pi]``; Gaussian noise is added, then each
    coordinate is standardized.
    """
    _check_even(s)
    rng = np.random.default_rng(seed)
    half = s // 2
    t = rng.uniform(0.0, np.pi, size=s)
    X = np.empty((s, 2))
    X[:half, 0], X[:half, 1] = np.cos(t[:half]), np.sin(t[:half])
    X[half:, 0], X[half:, 1] = 1.0 - np.cos(t[half:]), 0.5 - np.sin(t[half:])
    X += rng.normal(0.0, noise_std, size=X.shape) if noise_std else 0.0
    y = np.repeat([0, 1], half)
    return Dataset(standardize(X) if standardized else X, y, 2, "double_moons")


def gen_swiss_roll(s, noise_std=0.02, seed=0, standardized=True) -> Dataset:
    """Two interleaved spirals ``r(t) (cos(t + c pi), sin(t + c pi))``.

    ``t`` is uniform on ``[0, 3 pi]`` and ``r(t) = 0.2 + 0.6 t / (3 pi)``.
    """
    _check_even(s)
    rng = np.random.default_rng(seed)
    half = s // 2
    t = rng.uniform(0.0, 3 * np.pi, size=s)
    c = np.repeat([0, 1], half)
    r = 0.2 + 0.6 * t / (3 * np.pi)
    X = np.stack([r * np.cos(t + c * np.pi), r * np.sin(t + c * np.pi)], axis=1)
    X += rng.normal(0.0, noise_std, size=X.shape) if noise_std else 0.0
    return Dataset(standardize(X) if standardized else X, c, 2, "swiss_roll")


GENERATORS = {"double_moons": gen_double_moons, "swiss_roll": gen_swiss_roll}


def augment_features(d: Dataset, target_n: int) -> Dataset:
    """Zero-pad every feature vector on the right up to ``target_n``."""
    if target_n < d.n:
        raise ValueError(f"cannot augment {d.n} features down to {target_n}")
    X = np.zeros((len(d), target_n))
    X[:, :d.n] = d.X
    return Dataset(X, d.y, d.M, d.name)


def save_csv(d: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d.n)] + ["label"])
        for row, lab in zip(d.X, d.y):
            w.writerow([format(v, ".17g") for v in row] + [int(lab)])


def load_csv(path, M=None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ValueError(f"{path}: expected header 'x1,...,xn,label'")
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(rows[0]) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    if M is None:
        M = max(2, int(y.max()) + 1) if len(y) else 2
    return Dataset(X, y, M, os.path.splitext(os.path.basename(path))[0])


# ---------------------------------------------------------------------------
# IDX


class IdxFormatError(ValueError):
    """Malformed IDX file. ``field`` and ``offset`` locate the problem."""

    def __init__(self, message, field=None, offset=None):
        super().__init__(message)
        self.field = field
        self.offset = offset


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass
class IdxFile:
    magic: int
    dims: list
    payload: bytes

    def array(self) -> np.ndarray:
        return np.frombuffer(self.payload, dtype=np.uint8).reshape(self.dims)


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def parse_idx(buf: bytes, name="<bytes>") -> IdxFile:
    if len(buf) < 4:
        raise IdxTruncatedError(f"{name}: header truncated at byte {len(buf)}", "magic", len(buf))
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IDX_LABELS_MAGIC, IDX_IMAGES_MAGIC):
        raise IdxMagicError(f"{name}: bad magic 0x{magic:08x} at byte 0", "magic", 0)
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise IdxTruncatedError(f"{name}: dimension header truncated at byte {len(buf)}",
                                "dims", len(buf))
    dims = list(struct.unpack(f">{ndim}I", buf[4:end]))
    size = int(np.prod(dims))
    if len(buf) < end + size:
        raise IdxTruncatedError(
            f"{name}: payload truncated at byte {len(buf)}, expected {end + size} bytes",
            "payload", len(buf))
    if len(buf) > end + size:
        raise IdxFormatError(f"{name}: {len(buf) - end - size} trailing bytes after offset {end + size}",
                             "payload", end + size)
    return IdxFile(magic, dims, bytes(buf[end:]))


def read_idx(path) -> IdxFile:
    with _open(path) as fh:
        return parse_idx(fh.read(), str(path))


def encode_idx(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"IDX payload must be uint8, got {arr.dtype}")
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(arr.ndim)
    if magic is None:
        raise ValueError(f"IDX arrays must be 1-d (labels) or 3-d (images), got {arr.ndim}-d")
    head = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def write_idx(path, arr):
    with open(path, "wb") as fh:
        fh.write(encode_idx(arr))


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Decode an MNIST image/label IDX pair; pixels are scaled to [0, 1]."""
    img = read_idx(images_path)
    lab = read_idx(labels_path)
    if img.magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: magic 0x{img.magic:08x} is not an image file", "magic", 0)
    if lab.magic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: magic 0x{lab.magic:08x} is not a label file", "magic", 0)
    if img.dims[0] != lab.dims[0]:
        raise IdxCountMismatchError(
            f"{img.dims[0]} images but {lab.dims[0]} labels (count field at byte 4)", "count", 4)
    X = img.array().reshape(img.dims[0], -1).astype(np.float64) / 255.0
    y = lab.array().astype(np.int64)
    M = max(10, int(y.max()) + 1) if len(y) else 10
    return Dataset(X, y, M, "mnist")


def dataset_to_idx(d: Dataset, side=28) -> tuple[bytes, bytes]:
    """Encode images in [0, 1] and labels as an (images, labels) IDX pair."""
    pix = np.rint(d.X * 255.0)
    if pix.min() < 0 or pix.max() > 255:
        raise ValueError("pixel values must lie in [0, 1]")
    images = pix.astype(np.uint8).reshape(len(d), side, side)
    return encode_idx(images), encode_idx(d.y.astype(np.uint8))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split="train"):
    """Paths of the ``split`` image/label files in ``directory`` (plain or .gz), or None."""
    out = []
    for base in MNIST_FILES[split]:
        for cand in (base, base + ".gz", base.replace("-idx", ".idx")):
            p = os.path.join(directory, cand)
            if os.path.exists(p):
                out.append(p)
                break
        else:
            return None
    return tuple(out)
