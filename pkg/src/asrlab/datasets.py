"""Labeled feature sets: synthetic blobs, CSV ingestion and splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Invalid arguments or malformed dataset contents."""


class CSVFormatError(DatasetError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus one integer class id per row.

    Datasets built by the generators and loaders have contiguous labels
    ``0..C-1``. Subsets produced by ``split_train_val`` keep the parent's label
    space, so a validation subset may miss some classes (or be empty).
    """

    features: np.ndarray
    labels: np.ndarray
    label_map: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DatasetError("labels must be 1-D with one entry per feature row")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise DatasetError("labels must be integers")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain non-finite values")
        if y.size and y.min() < 0:
            raise DatasetError("labels must be non-negative")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.classes.size)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx])

    def check_contiguous(self):
        """Raise unless labels are exactly ``{0, ..., C-1}`` and N >= 1."""
        if len(self) == 0:
            raise DatasetError("dataset is empty")
        c = int(self.labels.max()) + 1
        if np.unique(self.labels).size != c:
            raise DatasetError("labels are not contiguous 0..C-1")


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.15
    seed: int = 0


def gen_gaussian_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int) -> LabeledDataset:
    """Isotropic Gaussian classes around means drawn from ``[0, 4]^dim``.

    Rows are ordered by class: ``per_class`` rows of class 0, then class 1...
    """
    for name, val in (("num_classes", num_classes), ("per_class", per_class), ("dim", dim)):
        if int(val) != val or val < 1:
            raise DatasetError(f"{name} must be a positive integer, got {val!r}")
    if not spread > 0:
        raise DatasetError(f"spread must be positive, got {spread!r}")
    rng = np.random.default_rng(seed)
    means = 4.0 * rng.random((num_classes, dim))
    noise = rng.standard_normal((num_classes, per_class, dim))
    x = (means[:, None, :] + spread * noise).reshape(num_classes * per_class, dim)
    y = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return LabeledDataset(x, y)


def load_csv(path, header: bool = False) -> LabeledDataset:
    """Read ``D`` numeric columns followed by an integer label column.

    Labels are remapped to contiguous ids in order of first appearance; the
    mapping (original -> new) is stored on ``label_map``.
    """
    path = Path(path)
    rows, raw_labels = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < 2:
                raise CSVFormatError(path, lineno, "need at least one feature and a label")
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise CSVFormatError(path, lineno, f"expected {width} fields, got {len(rec)}")
            try:
                feats = [float(c) for c in rec[:-1]]
            except ValueError:
                raise CSVFormatError(path, lineno, "non-numeric feature field") from None
            try:
                lab = int(rec[-1].strip())
            except ValueError:
                raise CSVFormatError(path, lineno, f"label {rec[-1]!r} is not an integer") from None
            if not all(np.isfinite(feats)):
                raise CSVFormatError(path, lineno, "non-finite feature value")
            rows.append(feats)
            raw_labels.append(lab)
    if not rows:
        raise CSVFormatError(path, 0, "file contains no data rows")
    mapping = {}
    for lab in raw_labels:
        mapping.setdefault(lab, len(mapping))
    y = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    return LabeledDataset(np.array(rows, dtype=np.float64), y, label_map=mapping)


def save_csv(ds: LabeledDataset, path, header: bool = False):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(ds.dim)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def split_by_class_half(ds: LabeledDataset):
    """Classes ``0..C//2-1`` go to train, the rest to test (relabelled from 0)."""
    c = int(ds.labels.max()) + 1 if len(ds) else 0
    if c < 2:
        raise DatasetError("need at least two classes to split by class")
    cut = c // 2
    train_idx = np.flatnonzero(ds.labels < cut)
    test_idx = np.flatnonzero(ds.labels >= cut)
    train = ds.subset(train_idx)
    test = LabeledDataset(ds.features[test_idx], ds.labels[test_idx] - cut)
    return train, test


def split_indices(n: int, spec: SplitSpec):
    if not 0.0 <= spec.val_fraction < 1.0:
        raise DatasetError(f"val_fraction must lie in [0, 1), got {spec.val_fraction}")
    n_val = int(np.floor(spec.val_fraction * n + 0.5))
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def split_train_val(ds: LabeledDataset, spec: SplitSpec = SplitSpec()):
    """Unstratified random hold-out of ``round(val_fraction * N)`` rows."""
    train_idx, val_idx = split_indices(len(ds), spec)
    return ds.subset(train_idx), ds.subset(val_idx)
