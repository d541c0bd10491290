"""Dataset synthesis, non-IID partitioning, splits, and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import STREAM_DATA, STREAM_PARTITION, STREAM_SPLIT, substream


class CsvFormatError(ValueError):
    """Malformed dataset CSV; message carries the offending row/column."""


@dataclass
class Dataset:
    inputs: np.ndarray  # float32, shape (n, dim)
    labels: np.ndarray  # int64, shape (n,)
    class_count: int

    def __post_init__(self) -> None:
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label outside [0, class_count)")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count)


def generate_synthetic(
    classes: int, dim: int, per_class: int, separation: float, seed: int
) -> Dataset:
    """Gaussian blobs: one mean per class on a sphere of radius ``separation``,
    identity covariance. Deterministic per seed."""
    if classes < 2 or dim < 1 or per_class < 1:
        raise ValueError("need classes >= 2, dim >= 1, per_class >= 1")
    rng = substream(seed, STREAM_DATA)
    means = rng.normal(size=(classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    xs = []
    ys = []
    for c in range(classes):
        xs.append(rng.normal(loc=means[c], scale=1.0, size=(per_class, dim)))
        ys.append(np.full(per_class, c, dtype=np.int64))
    return Dataset(np.concatenate(xs).astype(np.float32), np.concatenate(ys), classes)


def train_test_split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes ~train_fraction of its samples."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = substream(seed, STREAM_SPLIT)
    train_idx = []
    test_idx = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} samples; need at least 2 to split")
        rng.shuffle(idx)
        # round half-up, then clamp so both sides keep at least one sample
        k = int(np.floor(train_fraction * idx.size + 0.5))
        k = min(max(k, 1), idx.size - 1)
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))


def partition_dirichlet(
    ds: Dataset,
    n_clients: int,
    alpha: float,
    min_per_client: int,
    seed: int,
    max_attempts: int = 1000,
) -> list[Dataset]:
    """Label-skewed shards: per class, client shares drawn from Dirichlet(alpha).

    Resamples the whole assignment until every client holds at least
    ``min_per_client`` samples; raises if the constraint is infeasible or not
    met within ``max_attempts`` draws.
    """
    if n_clients < 1 or alpha <= 0.0 or min_per_client < 0:
        raise ValueError("need n_clients >= 1, alpha > 0, min_per_client >= 0")
    if n_clients * min_per_client > len(ds):
        raise ValueError(
            f"{n_clients} clients x {min_per_client} min samples exceeds dataset size {len(ds)}"
        )
    rng = substream(seed, STREAM_PARTITION)
    for _ in range(max_attempts):
        shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for c in range(ds.class_count):
            idx = np.flatnonzero(ds.labels == c)
            rng.shuffle(idx)
            shares = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(shares)[:-1] * idx.size).round().astype(int)
            for k, part in enumerate(np.split(idx, cuts)):
                shards[k].append(part)
        sizes = [sum(p.size for p in parts) for parts in shards]
        if min(sizes) >= min_per_client:
            return [ds.subset(np.sort(np.concatenate(parts))) for parts in shards]
    raise ValueError(
        f"could not satisfy min_per_client={min_per_client} within {max_attempts} attempts"
    )


def save_csv(ds: Dataset, path: str | Path, label_column: str = "label") -> None:
    """Write header + rows; floats carry 9 significant digits so float32 round-trips."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.inputs.shape[1])] + [label_column])
        for row, label in zip(ds.inputs, ds.labels):
            writer.writerow([f"{v:.9g}" for v in row] + [int(label)])


def load_csv(path: str | Path, label_column: str = "label") -> Dataset:
    """Read a feature CSV with a header row and an integer label column.

    Parse failures report the 1-based row number and the column name.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, expected a header row") from None
        if label_column not in header:
            raise CsvFormatError(f"{path}: no {label_column!r} column in header {header}")
        label_pos = header.index(label_column)
        features = [h for i, h in enumerate(header) if i != label_pos]
        if not features:
            raise CsvFormatError(f"{path}: no feature columns besides {label_column!r}")
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            vals = []
            for i, cell in enumerate(row):
                col = header[i]
                if i == label_pos:
                    try:
                        labels.append(int(cell))
                    except ValueError:
                        raise CsvFormatError(
                            f"{path}: row {lineno}, column {col!r}: "
                            f"label {cell!r} is not an integer"
                        ) from None
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise CsvFormatError(
                            f"{path}: row {lineno}, column {col!r}: {cell!r} is not numeric"
                        ) from None
            rows.append(vals)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise CsvFormatError(f"{path}: negative label {labels_arr.min()}")
    return Dataset(
        np.asarray(rows, dtype=np.float32), labels_arr, class_count=int(labels_arr.max()) + 1
    )
