"""Datasets and the feature stream.

A dataset is loaded once and its feature space is replayed as a sequence
of feature groups, which is how features "arrive" over time while the
instance set stays fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import pandas as pd

try:
    from .constants import DEFAULT_GROUP_SIZE
    from .utils import chunked
except ImportError:
    from constants import DEFAULT_GROUP_SIZE
    from utils import chunked

logger = logging.getLogger(__name__)

LabelColumn = str | int | None


class DataError(ValueError):
    ...


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense n x D matrix of instances by features, with optional labels
    remapped to 0..c-1 and the original class names kept alongside."""

    values: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"Expected a 2-D matrix, got shape {values.shape}.")
        n, d = values.shape
        if n < 2 or d < 1:
            raise DataError(f"Need n >= 2 and D >= 1, got n={n}, D={d}.")
        if not np.all(np.isfinite(values)):
            raise DataError("Dataset contains missing or non-finite values.")
        object.__setattr__(self, "values", _frozen(values))
        names = self.feature_names or tuple(f"f{i}" for i in range(d))
        if len(names) != d:
            raise DataError(f"Got {len(names)} feature names for {d} features.")
        object.__setattr__(self, "feature_names", tuple(map(str, names)))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise DataError(f"Labels have shape {labels.shape}, expected ({n},).")
            if not np.issubdtype(labels.dtype, np.integer):
                raise DataError("Labels must be integer class codes.")
            object.__setattr__(self, "labels", _frozen(labels.astype(int)))
            if not self.class_names:
                classes = tuple(map(str, np.unique(labels)))
                object.__setattr__(self, "class_names", classes)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else len(np.unique(self.labels))

    @property
    def supervised(self) -> bool:
        return self.labels is not None and self.n_classes >= 2

    @classmethod
    def from_csv(cls, path: str | Path, label_column: LabelColumn = None) -> Self:
        return load_csv(path, label_column)

    def to_csv(self, path: str | Path, label_name: str = "label") -> None:
        """Writes the dataset with 17 significant digits so values reload
        bit-exactly. Labels are written as their original class names."""
        frame = pd.DataFrame(self.values, columns=list(self.feature_names))
        if self.labels is not None:
            frame[label_name] = np.asarray(self.class_names, dtype=object)[self.labels]
        frame.to_csv(path, index=False, float_format="%.17g")

    def columns(self, indices) -> np.ndarray:
        return self.values[:, np.asarray(indices, dtype=int)]

    def take(self, rows) -> Self:
        """The same feature space restricted to a subset of instances."""
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            values=self.values[rows],
            labels=None if self.labels is None else self.labels[rows],
            feature_names=self.feature_names,
            class_names=self.class_names,
            name=self.name,
        )


class FeatureGroup(NamedTuple):
    group_id: int
    indices: tuple[int, ...]
    columns: np.ndarray


@dataclass(frozen=True)
class StreamConfig:
    group_size: int = DEFAULT_GROUP_SIZE
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError(f"Group size must be >= 1. Got {self.group_size}.")


def _resolve_label(header: list[str], label_column: LabelColumn) -> int | None:
    if label_column is None:
        return None
    if isinstance(label_column, str):
        if label_column in header:
            return header.index(label_column)
        if not label_column.lstrip("-").isdigit():
            raise DataError(f"Label column {label_column!r} not found in header.")
        label_column = int(label_column)
    if not -len(header) <= label_column < len(header):
        raise DataError(f"Label column index {label_column} out of range.")
    return label_column % len(header)


def encode_labels(raw: pd.Series) -> tuple[np.ndarray, tuple[str, ...]]:
    """Maps integer or categorical labels to dense codes 0..c-1."""
    text = raw.astype(str).str.strip()
    as_int = pd.to_numeric(text, errors="coerce")
    if as_int.notna().all() and np.all(as_int == np.round(as_int)):
        classes, codes = np.unique(as_int.astype(int).to_numpy(), return_inverse=True)
    else:
        classes, codes = np.unique(text.to_numpy(), return_inverse=True)
    return codes.astype(int), tuple(map(str, classes))


def load_csv(path: str | Path, label_column: LabelColumn = None) -> Dataset:
    """Loads a headed, comma-delimited CSV. Every non-label cell must parse
    as a real number; missing cells are an error rather than imputed.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not read {path}: {e}") from e
    header = list(frame.columns)
    label_idx = _resolve_label(header, label_column)

    labels = class_names = None
    if label_idx is not None:
        raw = frame.iloc[:, label_idx]
        if (raw.str.strip() == "").any():
            row = int(np.flatnonzero(raw.str.strip() == "")[0])
            raise DataError(f"Missing label at row {row + 1}.")
        labels, class_names = encode_labels(raw)
        frame = frame.drop(columns=frame.columns[label_idx])

    cells = frame.apply(lambda col: col.str.strip())
    blank = cells == ""
    if blank.to_numpy().any():
        row, col = np.argwhere(blank.to_numpy())[0]
        raise DataError(
            f"Missing value at row {row + 1}, column {cells.columns[col]!r}."
        )
    numeric = cells.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(
            f"Could not parse {cells.iat[row, col]!r} as a real number "
            f"at row {row + 1}, column {cells.columns[col]!r}."
        )
    dataset = Dataset(
        values=numeric.to_numpy(dtype=float),
        labels=labels,
        feature_names=tuple(cells.columns),
        class_names=class_names or (),
        name=path.stem,
    )
    logger.info(
        "Loaded %s: n=%d, D=%d, classes=%d",
        dataset.name,
        dataset.n,
        dataset.n_features,
        dataset.n_classes,
    )
    return dataset


def stream_groups(d: Dataset, cfg: StreamConfig) -> list[FeatureGroup]:
    """Partitions the feature space into groups of cfg.group_size, in file
    order or in a seed-determined permutation when shuffling.
    """
    order = np.arange(d.n_features)
    if cfg.shuffle:
        order = np.random.default_rng(cfg.seed).permutation(order)
    return [
        FeatureGroup(gid, tuple(map(int, idx)), d.columns(idx))
        for gid, idx in enumerate(chunked(order, cfg.group_size))
    ]


def make_synthetic(
    n: int, informative: int, noise: int, seed: int, shift: float = 1.5
) -> Dataset:
    """Binary dataset whose first `informative` columns are unit Gaussians
    shifted by -shift / +shift between the classes (class means 2*shift
    standard deviations apart) followed by `noise` label-independent
    unit Gaussians.
    """
    if informative < 1 or n < 4:
        raise ValueError("Need informative >= 1 and n >= 4.")
    if shift < 1.0:
        raise ValueError("Class means must be at least 2 standard deviations apart.")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    signs = np.where(labels == 1, 1.0, -1.0)[:, None]
    signal = rng.standard_normal((n, informative)) + shift * signs
    clutter = rng.standard_normal((n, noise))
    names = tuple(f"informative_{i}" for i in range(informative)) + tuple(
        f"noise_{i}" for i in range(noise)
    )
    return Dataset(
        values=np.hstack([signal, clutter]),
        labels=labels,
        feature_names=names,
        class_names=("0", "1"),
        name="synthetic",
    )
