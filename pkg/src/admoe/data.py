"""Datasets, CSV I/O, splitting, standardization and the synthetic benchmark."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Features plus ``t`` noisy-label sources.

    ``label_mask`` marks which (row, source) labels are present; absent
    labels are excluded from the loss. Sources with ``input_sources`` False
    are training targets only and never fed to a model as inputs.
    """

    features: np.ndarray
    ground_truth: np.ndarray | None = None
    noisy_labels: np.ndarray | None = None
    label_mask: np.ndarray | None = None
    source_weights: np.ndarray | None = None
    input_sources: np.ndarray | None = None
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = self.features.shape[0]
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth).astype(np.int64)
            if self.ground_truth.shape != (n,):
                raise DataError(f"ground truth has {self.ground_truth.shape[0]} rows, features {n}")
            _require_binary(self.ground_truth, "label")
        if self.noisy_labels is None:
            self.noisy_labels = np.zeros((n, 0), dtype=np.int64)
        self.noisy_labels = np.asarray(self.noisy_labels).astype(np.int64).reshape(n, -1)
        _require_binary(self.noisy_labels, "weak")
        t = self.noisy_labels.shape[1]
        if self.label_mask is None:
            self.label_mask = np.ones((n, t), dtype=bool)
        self.label_mask = np.asarray(self.label_mask, dtype=bool).reshape(n, t)
        if self.source_weights is None:
            self.source_weights = np.ones(t)
        self.source_weights = np.asarray(self.source_weights, dtype=np.float64).reshape(t)
        if self.input_sources is None:
            self.input_sources = np.ones(t, dtype=bool)
        self.input_sources = np.asarray(self.input_sources, dtype=bool).reshape(t)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def t(self) -> int:
        return self.noisy_labels.shape[1]

    @property
    def n_inputs(self) -> int:
        return int(self.input_sources.sum())

    def input_labels(self, rows=None) -> np.ndarray:
        y = self.noisy_labels[:, self.input_sources]
        return y if rows is None else y[rows]

    def target_weights(self) -> np.ndarray:
        """Per-(row, source) loss weights: source weight where present, else 0."""
        return self.label_mask * self.source_weights

    def with_sources(self, labels, weights=None) -> "Dataset":
        labels = np.asarray(labels).reshape(self.n, -1)
        return replace(
            self,
            noisy_labels=labels,
            label_mask=None,
            source_weights=weights,
            input_sources=None,
        )


def _require_binary(a: np.ndarray, what: str) -> None:
    bad = ~np.isin(a, (0, 1))
    if bad.any():
        idx = tuple(np.argwhere(bad)[0])
        raise DataError(f"non-binary {what} value {a[idx]} at row {idx[0]}")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    val: np.ndarray
    seed: int


def split_70_25_5(n: int, seed: int, labels=None, stratify: bool = False) -> Split:
    """Seeded shuffle cut at floor(0.70 n) / floor(0.95 n) into train/test/val.

    When ``labels`` are given the validation part must hold both classes;
    ``stratify`` applies the same cut within each class.
    """
    if n < 20:
        raise DataError(f"need at least 20 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    if stratify:
        if labels is None:
            raise DataError("stratified split needs labels")
        labels = np.asarray(labels)
        parts = ([], [], [])
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(idx.size)]
            a, b = int(math.floor(0.70 * idx.size)), int(math.floor(0.95 * idx.size))
            for bucket, chunk in zip(parts, (idx[:a], idx[a:b], idx[b:])):
                bucket.append(chunk)
        train, test, val = (np.sort(np.concatenate(p)) for p in parts)
    else:
        perm = rng.permutation(n)
        a, b = int(math.floor(0.70 * n)), int(math.floor(0.95 * n))
        train, test, val = perm[:a], perm[a:b], perm[b:]
    if labels is not None and np.unique(np.asarray(labels)[val]).size < 2:
        raise DataError(
            "validation split holds a single class; re-split with stratify=True or another seed"
        )
    return Split(train, test, val, seed)


def standardize(dataset: Dataset, train_idx) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Z-score all rows using statistics of the training rows only."""
    x = dataset.features
    mean = x[train_idx].mean(axis=0)
    std = np.maximum(x[train_idx].std(axis=0), 1e-8)
    return replace(dataset, features=(x - mean) / std), mean, std


# --- CSV ---------------------------------------------------------------------


def save_csv(dataset: Dataset, path) -> None:
    """Write ``f_*``, optional ``label`` and ``weak_*`` columns; absent labels are empty cells."""
    header = [f"f_{j}" for j in range(dataset.d)]
    if dataset.ground_truth is not None:
        header.append("label")
    header += [f"weak_{i}" for i in range(dataset.t)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(dataset.n):
            row = ["%.17g" % v for v in dataset.features[r]]
            if dataset.ground_truth is not None:
                row.append(str(int(dataset.ground_truth[r])))
            row += [
                str(int(v)) if present else ""
                for v, present in zip(dataset.noisy_labels[r], dataset.label_mask[r])
            ]
            w.writerow(row)


def load_csv(path, name: str | None = None) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        feat_cols = [i for i, h in enumerate(header) if h.startswith("f_")]
        weak_cols = [i for i, h in enumerate(header) if h.startswith("weak_")]
        label_col = header.index("label") if "label" in header else None
        if not feat_cols:
            raise DataError(f"{path}: no f_* feature columns in header")
        unknown = set(range(len(header))) - set(feat_cols) - set(weak_cols) - {label_col}
        if unknown:
            raise DataError(f"{path}: unexpected columns {[header[i] for i in sorted(unknown)]}")
        feats, labels, weak, mask = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                feats.append([float(row[i]) for i in feat_cols])
            except ValueError:
                col = next(i for i in feat_cols if not _is_float(row[i]))
                raise DataError(
                    f"{path}:{lineno}: non-numeric value {row[col]!r} in column {header[col]}"
                ) from None
            if label_col is not None:
                labels.append(_parse_bit(row[label_col], path, lineno, "label", allow_empty=False))
            wrow, mrow = [], []
            for i in weak_cols:
                v = _parse_bit(row[i], path, lineno, header[i], allow_empty=True)
                wrow.append(0 if v is None else v)
                mrow.append(v is not None)
            weak.append(wrow)
            mask.append(mrow)
    n = len(feats)
    return Dataset(
        features=np.array(feats, dtype=np.float64).reshape(n, len(feat_cols)),
        ground_truth=np.array(labels, dtype=np.int64) if label_col is not None else None,
        noisy_labels=np.array(weak, dtype=np.int64).reshape(n, len(weak_cols)),
        label_mask=np.array(mask, dtype=bool).reshape(n, len(weak_cols)),
        name=name or path.stem,
    )


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _parse_bit(cell: str, path, lineno: int, column: str, allow_empty: bool):
    cell = cell.strip()
    if cell == "" and allow_empty:
        return None
    if cell in ("0", "1", "0.0", "1.0"):
        return int(float(cell))
    raise DataError(f"{path}:{lineno}: non-binary value {cell!r} in column {column}")


# --- synthetic benchmark ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 8000
    d: int = 16
    anomaly_rate: float = 0.05
    difficulty: float = 0.85
    seed: int = 0
    n_clusters: int = 4

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**raw)


def make_synthetic(
    n: int,
    d: int,
    anomaly_rate: float = 0.05,
    difficulty: float = 0.85,
    seed: int = 0,
    n_clusters: int = 4,
) -> Dataset:
    """Clustered normals plus three kinds of anomaly.

    Normals are unit-variance Gaussian blobs around ``n_clusters`` centers.
    Each anomaly starts at a random center and is then displaced along
    feature 1 (global), along a cluster-specific direction (local), or
    spread out with a wider covariance (scattered). All anomalies also get
    an offset on feature 0. Every displacement shrinks as ``difficulty``
    goes from 0, where feature 0 alone separates the classes, to 1.
    """
    if not 0.0 < anomaly_rate < 0.5:
        raise DataError("anomaly_rate must lie in (0, 0.5)")
    if not 0.0 <= difficulty <= 1.0:
        raise DataError("difficulty must lie in [0, 1]")
    if d < 2:
        raise DataError("need at least 2 features")
    rng = np.random.default_rng(seed)
    n_anom = int(round(n * anomaly_rate))
    n_norm = n - n_anom

    centers = rng.normal(size=(n_clusters, d))
    centers *= 5.0 / np.linalg.norm(centers, axis=1, keepdims=True)
    centers[:, 0] = 0.0
    directions = rng.normal(size=(n_clusters, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    c_norm = rng.integers(n_clusters, size=n_norm)
    x_norm = centers[c_norm] + rng.normal(size=(n_norm, d))

    ease = 1.0 - difficulty
    kind = rng.integers(3, size=n_anom)
    c_anom = rng.integers(n_clusters, size=n_anom)
    x_anom = centers[c_anom] + rng.normal(size=(n_anom, d))
    glob = kind == 0
    x_anom[glob, 1] += (2.5 + 6.0 * ease) * rng.choice([-1.0, 1.0], size=glob.sum())
    local = kind == 1
    x_anom[local] += (2.0 + 3.0 * ease) * directions[c_anom[local]]
    scat = kind == 2
    x_anom[scat] = centers[c_anom[scat]] + (2.0 + 2.0 * ease) * rng.normal(size=(scat.sum(), d))
    x_anom[:, 0] += 14.0 * ease

    x = np.vstack([x_norm, x_anom])
    y = np.concatenate([np.zeros(n_norm, dtype=np.int64), np.ones(n_anom, dtype=np.int64)])
    perm = rng.permutation(n)
    return Dataset(features=x[perm], ground_truth=y[perm], name=f"synthetic-{seed}")


def append_clean_labels(dataset: Dataset, clean_indices, clean_weight: float) -> Dataset:
    """Add ground truth on ``clean_indices`` as an extra, target-only source.

    Rows outside ``clean_indices`` are marked absent for that source.
    """
    clean_indices = np.asarray(clean_indices, dtype=np.int64)
    if clean_indices.size == 0:
        warnings.warn("no clean indices given; dataset left unchanged", stacklevel=2)
        return dataset
    if dataset.ground_truth is None:
        raise DataError("clean-label integration needs ground truth")
    if clean_weight < 1.0:
        raise DataError("clean_weight must be >= 1")
    col = np.zeros(dataset.n, dtype=np.int64)
    col[clean_indices] = dataset.ground_truth[clean_indices]
    present = np.zeros(dataset.n, dtype=bool)
    present[clean_indices] = True
    return replace(
        dataset,
        noisy_labels=np.column_stack([dataset.noisy_labels, col]),
        label_mask=np.column_stack([dataset.label_mask, present]),
        source_weights=np.append(dataset.source_weights, clean_weight),
        input_sources=np.append(dataset.input_sources, False),
    )
