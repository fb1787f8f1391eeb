"""CSV ingestion and the bundled case-study fixtures."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .model import SurvivalDataset

__all__ = ["IngestionError", "DatasetFile", "load_dataset", "load_fixture", "FIXTURES"]


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetFile:
    """Column mapping for a CSV file with a header row."""

    path: str | Path
    time: str = "time"
    status: str = "status"
    hazard_covariates: Sequence[str] = ()
    time_covariates: Sequence[str] = ()
    standardize: Sequence[str] = field(default_factory=tuple)
    time_scale: float = 1.0


# covariate layout of the case studies; the fixture CSVs are already preprocessed
FIXTURES = {
    "lung": {"hazard": ("age", "sex", "ph.ecog"), "time": ("age",)},
    "leukemia": {"hazard": ("age", "sex", "wbc", "tpi"), "time": ("age", "wbc", "tpi")},
}


def _encode(col: pd.Series, name: str) -> np.ndarray:
    if pd.api.types.is_numeric_dtype(col):
        return col.to_numpy(dtype=float)
    levels = sorted(col.dropna().unique())
    if len(levels) != 2:
        raise IngestionError(f"column {name!r} is non-numeric and not a binary factor (levels: {levels[:5]})")
    return (col == levels[1]).astype(float).to_numpy()


def load_dataset(spec: DatasetFile) -> SurvivalDataset:
    path = Path(spec.path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError(f"no such file: {path}") from None
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path} is empty") from None
    if frame.empty:
        raise IngestionError(f"{path} has a header but no rows")
    wanted = [spec.time, spec.status, *spec.hazard_covariates, *spec.time_covariates]
    for name in wanted:
        if name not in frame.columns:
            raise IngestionError(f"column {name!r} not found in {path} (columns: {list(frame.columns)})")
    frame = frame.dropna(subset=list(dict.fromkeys(wanted)))
    if frame.empty:
        raise IngestionError(f"{path}: no complete rows for columns {wanted}")

    times = pd.to_numeric(frame[spec.time], errors="coerce").to_numpy(dtype=float) / spec.time_scale
    if np.any(~np.isfinite(times)) or np.any(times <= 0):
        raise IngestionError(f"column {spec.time!r} must hold strictly positive numbers")
    status = pd.to_numeric(frame[spec.status], errors="coerce").to_numpy()
    if not np.all(np.isin(status, (0, 1))):
        raise IngestionError(f"column {spec.status!r} must be coded 0 (censored) / 1 (event)")

    columns = {}
    for name in dict.fromkeys([*spec.hazard_covariates, *spec.time_covariates]):
        values = _encode(frame[name], name)
        if name in spec.standardize:
            sd = values.std(ddof=1)
            if not sd > 0:
                raise IngestionError(f"column {name!r} is constant and cannot be standardised")
            values = (values - values.mean()) / sd
        columns[name] = values
    n = len(frame)
    X = np.column_stack([columns[c] for c in spec.hazard_covariates]) if spec.hazard_covariates else np.zeros((n, 0))
    Xt = np.column_stack([columns[c] for c in spec.time_covariates]) if spec.time_covariates else np.zeros((n, 0))
    return SurvivalDataset(
        times, status.astype(int), X, Xt, tuple(spec.hazard_covariates), tuple(spec.time_covariates)
    )


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise IngestionError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    return Path(str(resources.files("ghdiag") / "data" / f"{name}.csv"))


def load_fixture(name: str) -> SurvivalDataset:
    """One of the bundled case studies with its standard covariate layout."""
    layout = FIXTURES.get(name)
    path = fixture_path(name)
    return load_dataset(DatasetFile(path, hazard_covariates=layout["hazard"], time_covariates=layout["time"]))
