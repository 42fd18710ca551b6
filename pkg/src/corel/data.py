"""Dataset ingestion: IDX files, CSV tables, synthetic blobs and splits."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_VALIDATION_SIZE = 5000


class FormatError(ValueError):
    """Malformed input file. ``offset`` is a byte offset (IDX) or a 1-based
    line number (CSV)."""

    def __init__(self, message: str, path: str = "", offset: int | None = None,
                 unit: str = "byte"):
        where = f" at {unit} {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {message}" if path else message + where)
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    k: int
    train: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_dataset(self)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self, name)
        return self.x[idx], self.y[idx]


def check_dataset(ds: Dataset) -> None:
    if ds.x.ndim != 2 or ds.y.ndim != 1 or ds.x.shape[0] != ds.y.shape[0]:
        raise ContractViolation(
            f"inconsistent shapes x={ds.x.shape} y={ds.y.shape}")
    if not np.all(np.isfinite(ds.x)):
        raise ContractViolation("non-finite feature values")
    if ds.y.size and (ds.y.min() < 0 or ds.y.max() >= ds.k):
        raise ContractViolation(f"labels outside [0, {ds.k})")
    if ds.meta.get("pixel_scaling") and (ds.x.min() < 0 or ds.x.max() > 1):
        raise ContractViolation("pixel features outside [0, 1]")
    parts = [np.asarray(p) for p in (ds.train, ds.val, ds.test)]
    total = sum(p.size for p in parts)
    if total:
        joined = np.concatenate(parts)
        if np.unique(joined).size != total:
            raise ContractViolation("splits overlap")
        if total != ds.n or joined.min() < 0 or joined.max() >= ds.n:
            raise ContractViolation("splits do not partition [0, N)")


def _read_header(buf: bytes, path: str, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError(f"truncated header ({len(buf)} bytes)", path, len(buf))
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise FormatError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", path, 0)
    return struct.unpack(">" + "I" * ndim, buf[4:need])


def read_idx_images(path: str) -> np.ndarray:
    """Raw ``uint8`` images, shape (count, rows, cols)."""
    with open(path, "rb") as f:
        buf = f.read()
    count, rows, cols = _read_header(buf, path, IMAGE_MAGIC, 3)
    body = 16 + count * rows * cols
    if len(buf) < body:
        raise FormatError(
            f"truncated pixel data: need {body} bytes, have {len(buf)}", path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols,
                         offset=16).reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    (count,) = _read_header(buf, path, LABEL_MAGIC, 1)
    if len(buf) < 8 + count:
        raise FormatError(
            f"truncated label data: need {8 + count} bytes, have {len(buf)}",
            path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path: str, labels_path: str, k: int = 10) -> Dataset:
    """Images flattened to rows and scaled by 1/255; no split assigned."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", labels_path, 4)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x=x, y=labels.astype(np.int64), k=k,
                   meta={"source": "idx", "pixel_scaling": "divide_by_255"})


def load_mnist(root: str, rng: np.random.Generator,
               train_subset: int | None = None) -> Dataset:
    """Canonical MNIST-style layout under ``root``.

    The 60,000 training rows are shuffled with ``rng``; the last 5,000 become
    validation and the rest training (optionally truncated to
    ``train_subset``). The 10,000-row test file is the test split. Only the
    selected rows are materialised as float64.
    """
    paths = {key: os.path.join(root, name) for key, name in MNIST_FILES.items()}
    tr_img = read_idx_images(paths["train_images"])
    tr_lab = read_idx_labels(paths["train_labels"])
    te_img = read_idx_images(paths["test_images"])
    te_lab = read_idx_labels(paths["test_labels"])
    if tr_img.shape[0] != tr_lab.shape[0]:
        raise FormatError("train image/label count mismatch", paths["train_labels"], 4)
    if te_img.shape[0] != te_lab.shape[0]:
        raise FormatError("test image/label count mismatch", paths["test_labels"], 4)
    n_tr = tr_img.shape[0]
    if n_tr <= MNIST_VALIDATION_SIZE:
        raise ContractViolation("training file too small for the validation carve-out")

    perm = rng.permutation(n_tr)
    val_rows = perm[n_tr - MNIST_VALIDATION_SIZE:]
    train_rows = perm[: n_tr - MNIST_VALIDATION_SIZE]
    if train_subset is not None:
        if not 1 <= train_subset <= train_rows.size:
            raise ContractViolation(f"train_subset={train_subset} out of range")
        train_rows = train_rows[:train_subset]
    train_rows = np.sort(train_rows)
    val_rows = np.sort(val_rows)

    flat_tr = tr_img.reshape(n_tr, -1)
    flat_te = te_img.reshape(te_img.shape[0], -1)
    x = np.concatenate([flat_tr[train_rows], flat_tr[val_rows], flat_te]).astype(
        np.float64) / 255.0
    y = np.concatenate([tr_lab[train_rows], tr_lab[val_rows], te_lab]).astype(np.int64)
    a, b = train_rows.size, val_rows.size
    return Dataset(
        x=x, y=y, k=10,
        train=np.arange(a), val=np.arange(a, a + b), test=np.arange(a + b, x.shape[0]),
        meta={"source": "mnist", "root": os.path.abspath(root),
              "pixel_scaling": "divide_by_255", "train_subset": train_subset,
              "validation_carve_out": "last 5000 of seeded shuffle"},
    )


def load_csv(path: str, header: bool = False, k: int | None = None) -> Dataset:
    """Last column is an integer label, every other column a feature."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as f:
        for lineno, rec in enumerate(csv.reader(f), start=1):
            if header and lineno == 1:
                continue
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise FormatError("need at least one feature and a label",
                                      path, lineno, "line")
            elif len(rec) != width:
                raise FormatError(f"expected {width} fields, got {len(rec)}",
                                  path, lineno, "line")
            try:
                rows.append([float(v) for v in rec[:-1]])
                lab = float(rec[-1])
            except ValueError as exc:
                raise FormatError(str(exc), path, lineno, "line") from None
            if lab != int(lab) or lab < 0:
                raise FormatError(f"label {rec[-1]!r} is not a non-negative integer",
                                  path, lineno, "line")
            labels.append(int(lab))
    if not rows:
        raise FormatError("no data rows", path)
    x = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise FormatError("non-finite feature value", path)
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(x=x, y=y, k=int(k if k is not None else y.max() + 1),
                   meta={"source": "csv", "path": os.path.abspath(path)})


def make_blobs(k: int, n_per_class: int, dim: int, center_spread: float,
               noise_sigma: float, rng: np.random.Generator) -> Dataset:
    if k < 2 or dim < 2 or n_per_class < 1:
        raise ContractViolation("make_blobs needs k >= 2, dim >= 2, n_per_class >= 1")
    if noise_sigma <= 0:
        raise ContractViolation("noise_sigma must be positive")
    centers = rng.uniform(-center_spread, center_spread, size=(k, dim))
    y = np.repeat(np.arange(k), n_per_class)
    x = centers[y] + noise_sigma * rng.standard_normal((y.size, dim))
    return Dataset(x=x, y=y, k=k,
                   meta={"source": "blobs", "centers": centers.tolist()})


def split(ds: Dataset, val_fraction: float, test_fraction: float,
          rng: np.random.Generator) -> Dataset:
    """Shuffled disjoint train/val/test index sets (each stored sorted)."""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ContractViolation("fractions must be >= 0 and sum to < 1")
    n = ds.n
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    if (val_fraction > 0 and n_val == 0) or (test_fraction > 0 and n_test == 0):
        raise ContractViolation(f"dataset of {n} rows too small for requested split")
    if n - n_val - n_test < 1:
        raise ContractViolation("training split would be empty")
    perm = rng.permutation(n)
    return replace(
        ds,
        val=np.sort(perm[:n_val]),
        test=np.sort(perm[n_val:n_val + n_test]),
        train=np.sort(perm[n_val + n_test:]),
    )
