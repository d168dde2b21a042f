"""Synthetic benchmark datasets, CSV ingestion, min-max preprocessing and the
model/interpretation split."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

SYNTHETIC_IDS = (1, 2, 3, 4, 5, 6)

# minimum dimension needed by each generating formula
_MIN_DIM = {1: 2, 2: 1, 3: 1, 4: 1, 5: 1, 6: 1}


@dataclass
class DataTable:
    features: np.ndarray
    target: np.ndarray
    feature_names: list[str]
    # source categorical column -> its indicator column names
    indicator_groups: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if self.target.shape != (self.features.shape[0],):
            raise ValueError(
                f"target has length {self.target.shape} but features have "
                f"{self.features.shape[0]} rows")
        if self.features.shape[1] < 1:
            raise ValueError("at least one feature column is required")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names does not match the column count")
        if not (np.isfinite(self.features).all() and np.isfinite(self.target).all()):
            raise ValueError("DataTable entries must be finite")
        self.feature_names = list(self.feature_names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "DataTable":
        rows = np.asarray(rows, dtype=int)
        return DataTable(self.features[rows], self.target[rows],
                         self.feature_names, dict(self.indicator_groups))

    def with_target(self, target) -> "DataTable":
        return DataTable(self.features, target, self.feature_names,
                         dict(self.indicator_groups))

    def to_frame(self, target_name: str = "y") -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=self.feature_names)
        df[target_name] = self.target
        return df

    def to_csv(self, path, target_name: str = "y") -> None:
        self.to_frame(target_name).to_csv(path, index=False, float_format="%.17g")


@dataclass
class GroundTruth:
    true_coefficients: np.ndarray
    true_effects: np.ndarray

    def take(self, rows) -> "GroundTruth":
        rows = np.asarray(rows, dtype=int)
        return GroundTruth(self.true_coefficients[rows], self.true_effects[rows])


# ---------------------------------------------------------------------------
# synthetic datasets

def _check_synthetic(dataset_id: int, d: int) -> None:
    if dataset_id not in _MIN_DIM:
        raise ValueError(f"unknown synthetic dataset id {dataset_id!r}; "
                         f"expected one of {SYNTHETIC_IDS}")
    if d < _MIN_DIM[dataset_id]:
        raise ValueError(f"dataset {dataset_id} needs d >= {_MIN_DIM[dataset_id]}, got {d}")


def synthetic_mean(dataset_id: int, features: np.ndarray) -> np.ndarray:
    """Noiseless regression function E[Y | x] of a synthetic dataset."""
    X = np.asarray(features, dtype=float)
    _check_synthetic(dataset_id, X.shape[1])
    x1 = X[:, 0]
    if dataset_id == 1:
        return 1.0 + 5.0 * x1 - 5.0 * X[:, 1]
    if dataset_id == 2:
        return np.where(x1 <= 0.5, 20.0 * x1, 20.0 - 20.0 * x1)
    if dataset_id in (3, 4):
        return X @ _alternating_signs(X.shape[1])
    if dataset_id == 5:
        return np.where((x1 >= 1 / 3) & (x1 <= 2 / 3), 20.0 * x1, 0.0)
    return 20.0 * np.sin(2.0 * np.pi * x1)


def synthetic_truth(dataset_id: int, features: np.ndarray) -> GroundTruth:
    """Analytic local slopes dE[Y|x]/dx_j at every row.

    At the breakpoints of datasets 2 and 5 the derivative does not exist;
    the slope of the branch to the left of the breakpoint is used.
    """
    X = np.asarray(features, dtype=float)
    _check_synthetic(dataset_id, X.shape[1])
    n, d = X.shape
    x1 = X[:, 0]
    B = np.zeros((n, d))
    if dataset_id == 1:
        B[:, 0] = 5.0
        B[:, 1] = -5.0
    elif dataset_id == 2:
        B[:, 0] = np.where(x1 <= 0.5, 20.0, -20.0)
    elif dataset_id in (3, 4):
        B[:] = _alternating_signs(d)
    elif dataset_id == 5:
        B[:, 0] = np.where((x1 > 1 / 3) & (x1 <= 2 / 3), 20.0, 0.0)
    else:
        B[:, 0] = 40.0 * np.pi * np.cos(2.0 * np.pi * x1)
    return GroundTruth(B, B * X)


def _alternating_signs(d: int) -> np.ndarray:
    return np.where(np.arange(d) % 2 == 0, 1.0, -1.0)


def generate_synthetic(dataset_id: int, n: int, d: int = 20,
                       seed: int = 0) -> tuple[DataTable, GroundTruth]:
    """Draw ``n`` rows of synthetic dataset ``dataset_id`` (1..6).

    Features are Unif(0, 1), or Bernoulli(1/2) for dataset 4; the target
    is the dataset's regression function plus standard normal noise.
    """
    _check_synthetic(dataset_id, d)
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if dataset_id == 4:
        X = rng.integers(0, 2, size=(n, d)).astype(float)
    else:
        X = rng.uniform(0.0, 1.0, size=(n, d))
    y = synthetic_mean(dataset_id, X) + rng.standard_normal(n)
    names = [f"X{j + 1}" for j in range(d)]
    return DataTable(X, y, names), synthetic_truth(dataset_id, X)


# ---------------------------------------------------------------------------
# CSV ingestion

def _parse_float(text: str) -> float:
    # float() is correctly rounded, unlike pandas' fast parser
    try:
        return float(text)
    except ValueError:
        return np.nan


def load_csv(path, target_column: str,
             categorical_columns: Sequence[str] = ()) -> DataTable:
    """Read a comma separated file with a header row into a DataTable.

    Categorical columns are expanded into one 0/1 indicator per level.
    Rows with any missing cell are dropped (listwise deletion) and the
    number of dropped rows is reported through a warning.
    """
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    raw.columns = [c.strip() for c in raw.columns]
    if target_column not in raw.columns:
        raise ValueError(f"{path}: target column {target_column!r} not found; "
                         f"columns are {list(raw.columns)}")
    categorical_columns = list(categorical_columns)
    for c in categorical_columns:
        if c not in raw.columns:
            raise ValueError(f"{path}: categorical column {c!r} not found")
        if c == target_column:
            raise ValueError("the target column cannot be categorical")

    raw = raw.apply(lambda s: s.str.strip())
    raw = raw.replace("", np.nan)
    numeric = {}
    for c in raw.columns:
        if c in categorical_columns:
            continue
        col = raw[c]
        values = col.map(_parse_float, na_action="ignore").astype(float)
        bad = (values.isna() | ~np.isfinite(values.fillna(0.0))) & col.notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # +2: header line and 1-based numbering
            raise ValueError(f"{path}: cannot parse {col.iloc[row]!r} as a number "
                             f"in column {c!r}, line {row + 2}")
        numeric[c] = values

    frame = pd.DataFrame(numeric)
    for c in categorical_columns:
        frame[c] = raw[c]
    frame = frame[list(raw.columns)]
    missing = frame.isna().any(axis=1)
    n_dropped = int(missing.sum())
    if n_dropped:
        msg = f"{path}: dropped {n_dropped} row(s) with missing values"
        log.warning(msg)
        warnings.warn(msg, stacklevel=2)
        frame = frame.loc[~missing]
    if frame.empty:
        raise ValueError(f"{path}: no complete rows")

    columns, names, groups = [], [], {}
    for c in frame.columns:
        if c == target_column:
            continue
        if c in categorical_columns:
            levels = sorted(frame[c].unique())
            groups[c] = []
            for level in levels:
                name = f"{c}={level}"
                columns.append((frame[c] == level).to_numpy(dtype=float))
                names.append(name)
                groups[c].append(name)
        else:
            columns.append(frame[c].to_numpy(dtype=float))
            names.append(c)
    if not columns:
        raise ValueError(f"{path}: no feature columns besides the target")
    X = np.column_stack(columns)
    y = frame[target_column].to_numpy(dtype=float)
    return DataTable(X, y, names, groups)


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class PreprocessSpec:
    """Min-max parameters for continuous columns; indicator columns pass through."""

    continuous: dict[str, tuple[float, float]]
    indicators: dict[str, list[str]]
    columns: list[str]

    def to_dict(self) -> dict:
        return {"continuous": {k: list(v) for k, v in self.continuous.items()},
                "indicators": self.indicators, "columns": self.columns}

    @classmethod
    def from_dict(cls, obj: dict) -> "PreprocessSpec":
        return cls({k: tuple(v) for k, v in obj["continuous"].items()},
                   {k: list(v) for k, v in obj["indicators"].items()},
                   list(obj["columns"]))


def fit_preprocess(table: DataTable) -> PreprocessSpec:
    indicator_cols = {c for cols in table.indicator_groups.values() for c in cols}
    continuous = {}
    for j, name in enumerate(table.feature_names):
        if name in indicator_cols:
            continue
        col = table.features[:, j]
        continuous[name] = (float(col.min()), float(col.max()))
    return PreprocessSpec(continuous, {k: list(v) for k, v in table.indicator_groups.items()},
                          list(table.feature_names))


def apply_preprocess(spec: PreprocessSpec, table: DataTable) -> DataTable:
    """Rescale continuous columns with the fitted min/max (no clipping).

    Columns that were constant on the fitting data map to 0.
    """
    if list(table.feature_names) != spec.columns:
        raise ValueError(f"column mismatch: spec has {spec.columns}, "
                         f"table has {table.feature_names}")
    X = table.features.copy()
    for j, name in enumerate(table.feature_names):
        if name not in spec.continuous:
            continue
        lo, hi = spec.continuous[name]
        if hi > lo:
            X[:, j] = (X[:, j] - lo) / (hi - lo)
        else:
            X[:, j] = 0.0
    return DataTable(X, table.target, table.feature_names, dict(table.indicator_groups))


# ---------------------------------------------------------------------------
# splitting

def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the (model-training, interpretation) halves.

    The odd row, if any, goes to the model-training half. Indices within
    each half are sorted so row order is preserved.
    """
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (n + 1) // 2
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_half(table: DataTable, seed: int) -> tuple[DataTable, DataTable]:
    train_rows, interp_rows = split_indices(table.n, seed)
    return table.take(train_rows), table.take(interp_rows)
