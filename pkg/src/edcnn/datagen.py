"""Datasets: the noisy sinc regression model, a two-class signal stand-in,
CSV ingestion and windowing of tri-axial streams."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from edcnn._io import atomic_write_text

__all__ = [
    "LabeledDataset",
    "SplitSpec",
    "CsvFormatError",
    "sinc_norm",
    "gen_sinc_train",
    "gen_sinc_test",
    "gen_two_class_signals",
    "load_csv",
    "write_csv",
    "window_series",
    "window_dataset",
    "stratified_indices",
    "split",
]

SCHEMAS = ("features_then_target", "features_then_label")


class CsvFormatError(ValueError):
    """Malformed CSV input; ``row`` is the 1-based line number."""

    def __init__(self, path, row: int, msg: str):
        super().__init__(f"{path}: row {row}: {msg}")
        self.row = row


@dataclass
class LabeledDataset:
    """``features`` is ``(m, d)``; ``targets`` holds reals or integer labels.

    ``kind`` is ``"regression"`` or ``"classification"``.
    """

    features: np.ndarray
    targets: np.ndarray
    kind: str = "regression"
    n_classes: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.kind == "regression":
            self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        elif self.kind == "classification":
            t = np.asarray(self.targets)
            if t.size and not np.all(t == np.round(t)):
                raise ValueError("class labels must be integers")
            self.targets = t.astype(np.int64).reshape(-1)
            if self.n_classes == 0 and self.targets.size:
                self.n_classes = int(self.targets.max()) + 1
            if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.n_classes):
                raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.targets.shape[0] != self.features.shape[0]:
            raise ValueError("features and targets differ in row count")
        if self.features.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.targets[idx], self.kind, self.n_classes)


def sinc_norm(X) -> np.ndarray:
    """``sin(||x||) / ||x||`` row-wise, with value 1 at the origin."""
    r = np.linalg.norm(np.atleast_2d(np.asarray(X, dtype=np.float64)), axis=1)
    out = np.ones_like(r)
    nz = r != 0.0
    out[nz] = np.sin(r[nz]) / r[nz]
    return out


def _check_sizes(d: int, m: int) -> None:
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")


def gen_sinc_train(d: int, m: int, noise_var: float = 0.01, seed: int = 0) -> LabeledDataset:
    """``y = sin(||x||)/||x|| + eps`` with ``x ~ U[-10, 10]^d`` and ``eps ~ N(0, noise_var)``."""
    _check_sizes(d, m)
    if not noise_var >= 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var!r}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-10.0, 10.0, size=(m, d))
    y = sinc_norm(X)
    if noise_var > 0:
        y = y + rng.normal(0.0, math.sqrt(noise_var), size=m)
    return LabeledDataset(X, y)


def gen_sinc_test(d: int, m_test: int, seed: int = 0) -> LabeledDataset:
    """Noise-free version of :func:`gen_sinc_train`."""
    return gen_sinc_train(d, m_test, 0.0, seed)


def gen_two_class_signals(d: int, m: int, margin: float = 10.0, seed: int = 0,
                          noise_sd: float = 0.5) -> LabeledDataset:
    """Balanced two-class sinusoid data.

    Class 0 is one cycle of a unit-amplitude sine over the ``d`` samples; class 1
    has four cycles and amplitude ``1 + margin``.  Each record gets a small
    random phase and amplitude jitter plus Gaussian noise.
    """
    _check_sizes(d, m)
    if d < 4:
        raise ValueError(f"two-class signals need d >= 4, got {d}")
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin!r}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(m) % 2)
    t = np.arange(d) / d
    freq = np.where(labels == 1, 4.0, 1.0)[:, None]
    amp = np.where(labels == 1, 1.0 + margin, 1.0) * rng.uniform(0.9, 1.1, m)
    phase = rng.uniform(-0.2, 0.2, m)
    X = amp[:, None] * np.sin(2 * np.pi * freq * t[None, :] + phase[:, None])
    X += rng.normal(0.0, noise_sd, size=(m, d))
    return LabeledDataset(X, labels, "classification", 2)


def load_csv(path, schema: str = "features_then_target", skip_header: bool = False) -> LabeledDataset:
    """Read numeric rows; the last column is the target (or integer class label)."""
    if schema not in SCHEMAS:
        raise ValueError(f"schema must be one of {SCHEMAS}, got {schema!r}")
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if skip_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise CsvFormatError(path, lineno, "need at least one feature and one target column")
            elif len(row) != width:
                raise CsvFormatError(path, lineno, f"expected {width} columns, found {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise CsvFormatError(path, lineno, f"non-numeric cell ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                raise CsvFormatError(path, lineno, "non-finite value")
            rows.append(vals)
    if not rows:
        raise CsvFormatError(path, 0, "file contains no data rows")
    arr = np.array(rows)
    if schema == "features_then_target":
        return LabeledDataset(arr[:, :-1], arr[:, -1])
    labels = arr[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise CsvFormatError(path, int(np.argmax((labels != np.round(labels)) | (labels < 0))) + 1,
                             "class labels must be non-negative integers")
    return LabeledDataset(arr[:, :-1], labels.astype(np.int64), "classification")


def dataset_csv(data: LabeledDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for x, t in zip(data.features, data.targets):
        last = str(int(t)) if data.kind == "classification" else repr(float(t))
        w.writerow([repr(float(v)) for v in x] + [last])
    return buf.getvalue()


def write_csv(data: LabeledDataset, path) -> None:
    """Write rows as shortest round-trip decimal strings, target last."""
    atomic_write_text(path, dataset_csv(data))


def window_series(stream, window: int) -> np.ndarray:
    """Cut a ``(T, 3)`` stream into non-overlapping windows flattened time-major.

    Each record is ``x1 y1 z1 x2 y2 z2 ...`` of length ``3 * window``; a trailing
    partial window is dropped.
    """
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim != 2 or stream.shape[1] != 3:
        raise ValueError(f"stream must have shape (T, 3), got {stream.shape}")
    if int(window) != window or window < 1:
        raise ValueError(f"window must be a positive integer, got {window!r}")
    T = stream.shape[0]
    if T < window:
        raise ValueError(f"stream has {T} steps, fewer than window {window}")
    n = T // window
    return stream[: n * window].reshape(n, 3 * window)


def window_dataset(stream, labels, window: int) -> LabeledDataset:
    """Windowed features with each window labeled by its most frequent step label."""
    X = window_series(stream, window)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != np.asarray(stream).shape[0]:
        raise ValueError("labels must have one entry per time step")
    per = labels[: X.shape[0] * window].reshape(X.shape[0], window)
    K = int(labels.max()) + 1
    # bincount + argmax picks the smallest label on ties
    y = np.array([np.argmax(np.bincount(r, minlength=K)) for r in per])
    return LabeledDataset(X, y, "classification", K)


@dataclass
class SplitSpec:
    """How to divide a dataset.

    ``random_fraction`` sends ``fraction`` of the rows to train (stratified by
    label for classification).  ``by_group`` keeps each group on one side:
    groups in ``train_groups`` go to train, or if that is unset a seeded
    ``fraction`` of the distinct groups does.
    """

    mode: str = "random_fraction"
    fraction: float = 0.8
    group_ids: Optional[Sequence[int]] = None
    train_groups: Optional[Sequence[int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random_fraction", "by_group"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction!r}")
        if self.mode == "by_group" and self.group_ids is None:
            raise ValueError("by_group split requires group_ids")


def stratified_indices(labels: np.ndarray, fraction: float,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class seeded split; each class contributes ``round(fraction * n_c)`` train rows."""
    tr, te = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(math.floor(fraction * idx.size + 0.5))
        tr.append(idx[:k])
        te.append(idx[k:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(te))


def split(data: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Disjoint, exhaustive (train, test) split."""
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "by_group":
        groups = np.asarray(spec.group_ids)
        if groups.shape[0] != data.m:
            raise ValueError("group_ids must have one entry per row")
        if spec.train_groups is not None:
            chosen = np.asarray(list(spec.train_groups))
        else:
            uniq = np.unique(groups)
            k = int(math.floor(spec.fraction * uniq.size + 0.5))
            chosen = np.sort(rng.permutation(uniq)[:k])
        mask = np.isin(groups, chosen)
        return data.subset(np.flatnonzero(mask)), data.subset(np.flatnonzero(~mask))
    if data.kind == "classification":
        tr, te = stratified_indices(data.targets, spec.fraction, rng)
    else:
        k = int(math.floor(spec.fraction * data.m + 0.5))
        perm = rng.permutation(data.m)
        tr, te = np.sort(perm[:k]), np.sort(perm[k:])
    return data.subset(tr), data.subset(te)
