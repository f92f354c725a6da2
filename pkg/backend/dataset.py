"""Dataset container, CSV ingestion, z-score normalization, folds and noise injection."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from .exceptions import DatasetError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
NOISE_PREFIX = "noise_"


@dataclass(frozen=True)
class Dataset:
    """N x J feature matrix with +1/-1 labels and distinct feature names."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: Tuple[str, ...]

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels)
        names = tuple(str(name) for name in self.feature_names)
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {features.shape}")
        n, j = features.shape
        if n < 2 or j < 1:
            raise DatasetError(f"need at least 2 samples and 1 feature, got {n} x {j}")
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got shape {labels.shape}")
        if not np.all(np.isin(labels, (1, -1))):
            raise DatasetError("every label must be +1 or -1")
        if len(names) != j:
            raise DatasetError(f"{len(names)} feature names for {j} columns")
        if len(set(names)) != j:
            raise DatasetError("feature names must be distinct")
        bad = ~np.isfinite(features)
        if bad.any():
            column = int(np.argwhere(bad)[0][1])
            raise DatasetError(f"non-finite value in column {column} ({names[column]})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels.astype(int))
        object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.features[indices], self.labels[indices], self.feature_names)

    def class_counts(self) -> dict:
        return {1: int(np.sum(self.labels == 1)), -1: int(np.sum(self.labels == -1))}

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[LABEL_COLUMN] = self.labels
        return frame


@dataclass(frozen=True)
class NormalizationStats:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).ravel()
        stds = np.asarray(self.stds, dtype=float).ravel()
        if means.shape != stds.shape:
            raise DatasetError("means and stds differ in length")
        if np.any(stds < 0):
            raise DatasetError("standard deviations must be non-negative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def dim(self) -> int:
        return self.means.size

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Apply l' = (l - mean) / std to rows of ``x``; zero-std columns map to 0."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DatasetError(f"expected {self.dim} features, got {x.shape[-1]}")
        scale = np.where(self.stds > 0, self.stds, 1.0)
        out = (x - self.means) / scale
        return np.where(self.stds > 0, out, 0.0)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int)
        if self.k < 2:
            raise DatasetError("k must be at least 2")
        if assignment.ndim != 1 or np.any(assignment < 0) or np.any(assignment >= self.k):
            raise DatasetError(f"fold ids must lie in [0, {self.k})")
        object.__setattr__(self, "assignment", assignment)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def split(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, held-out indices) for one fold."""
        held_out = self.assignment == fold
        return np.flatnonzero(~held_out), np.flatnonzero(held_out)


def zscore_fit(train: Dataset) -> NormalizationStats:
    """Population mean and standard deviation of each column."""
    x = np.asarray(train.features, dtype=float)
    if x.shape[0] == 0:
        raise DatasetError("cannot fit normalization on an empty dataset")
    bad = ~np.isfinite(x)
    if bad.any():
        raise DatasetError(f"non-finite value in column {int(np.argwhere(bad)[0][1])}")
    return NormalizationStats(x.mean(axis=0), x.std(axis=0, ddof=0))


def zscore_apply(data: Dataset, stats: NormalizationStats) -> Dataset:
    if stats.dim != data.n_features:
        raise DatasetError(f"stats cover {stats.dim} features, dataset has {data.n_features}")
    return Dataset(stats.transform(data.features), data.labels, data.feature_names)


def kfold_split(n: int, k: int, seed: int, labels: Optional[np.ndarray] = None) -> FoldAssignment:
    """Deterministic k-fold assignment; stratified by label when labels are given."""
    if k < 2:
        raise DatasetError("k must be at least 2")
    if n < k:
        raise DatasetError(f"cannot split {n} samples into {k} folds")
    assignment = np.empty(n, dtype=int)
    placeholder = np.zeros((n, 1))
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got shape {labels.shape}")
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        folds = splitter.split(placeholder, labels)
    else:
        folds = KFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder)
    for fold, (_, held_out) in enumerate(folds):
        assignment[held_out] = fold
    return FoldAssignment(k, assignment)


def inject_irrelevant_features(data: Dataset, count: int, seed: int) -> Dataset:
    """Append ``count`` i.i.d. standard normal columns named noise_1..noise_count."""
    if count < 0:
        raise DatasetError("count must be >= 0")
    if count == 0:
        return data
    names = tuple(f"{NOISE_PREFIX}{i + 1}" for i in range(count))
    clash = set(names) & set(data.feature_names)
    if clash:
        raise DatasetError(f"noise column names already in use: {sorted(clash)[:3]}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((data.n_samples, count))
    return Dataset(np.hstack([data.features, noise]), data.labels.copy(), data.feature_names + names)


def select_features(data: Dataset, names: Sequence[str]) -> Dataset:
    """Dataset restricted to ``names``, in the given order."""
    missing = [name for name in names if name not in data.feature_names]
    if missing:
        raise DatasetError(f"unknown features: {missing}")
    index = [data.feature_names.index(name) for name in names]
    return Dataset(data.features[:, index], data.labels, tuple(names))


def stratified_train_test_split(data: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise DatasetError("train fraction must lie in (0, 1)")
    indices = np.arange(data.n_samples)
    counts = data.class_counts()
    stratify = data.labels if min(counts.values()) >= 2 else None
    train_idx, test_idx = train_test_split(indices, train_size=train_fraction,
                                           random_state=seed, stratify=stratify)
    return data.subset(np.sort(train_idx)), data.subset(np.sort(test_idx))


def load_csv(path: Union[str, Path]) -> Dataset:
    """Read a dataset CSV: feature columns followed by a final ``label`` column."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={LABEL_COLUMN: str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    if frame.columns.empty or frame.columns[-1] != LABEL_COLUMN:
        raise DatasetError(f"{path}: last column must be '{LABEL_COLUMN}'")
    if frame.empty:
        raise DatasetError(f"{path}: no data rows")
    label_text = frame[LABEL_COLUMN].astype(str).str.strip()
    mapping = {"+1": 1, "1": 1, "-1": -1}
    unknown = sorted(set(label_text) - set(mapping))
    if unknown:
        raise DatasetError(f"{path}: label values must be +1/-1, found {unknown[:3]}")
    feature_frame = frame.drop(columns=[LABEL_COLUMN])
    try:
        features = feature_frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric feature value ({exc})") from exc
    logger.info(f"Dataset loaded from {path} with {len(frame)} records and {features.shape[1]} features")
    return Dataset(features, label_text.map(mapping).to_numpy(), tuple(feature_frame.columns))


def save_csv(data: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(data.features, columns=list(data.feature_names))
    frame[LABEL_COLUMN] = np.where(data.labels == 1, "+1", "-1")
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    logger.info(f"Saved {data.n_samples} records to {path}")
    return path
