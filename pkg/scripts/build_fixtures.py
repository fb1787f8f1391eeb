"""Rebuild the bundled case-study CSVs from their upstream sources.

Usage::

    python scripts/build_fixtures.py LIFELINES_WHEEL SURVSET_WHEEL

``lifelines`` ships a copy of ``survival::lung``; ``SurvSet`` ships
``spBayesSurv::LeukSurv``. Both wheels are on PyPI
(``pip download --no-deps lifelines SurvSet``).
"""

import io
import pickle
import sys
import zipfile
from pathlib import Path

import pandas as pd

# lung reproduces the reference AICs with 365.25 days/year, leukemia with 365.24
LUNG_DAYS_PER_YEAR = 365.25
LEUKEMIA_DAYS_PER_YEAR = 365.24
OUT = Path(__file__).resolve().parents[1] / "src" / "ghdiag" / "data"


def standardize(col: pd.Series) -> pd.Series:
    return (col - col.mean()) / col.std()


def build_lung(wheel: str) -> pd.DataFrame:
    with zipfile.ZipFile(wheel) as zf:
        raw = pd.read_csv(io.BytesIO(zf.read("lifelines/datasets/lung.csv")))
    raw = raw.dropna(subset=["ph.ecog"]).reset_index(drop=True)
    return pd.DataFrame(
        {
            "time": raw["time"] / LUNG_DAYS_PER_YEAR,
            "status": raw["status"].astype(int),
            "age": standardize(raw["age"]),
            "sex": (raw["sex"] - 1).astype(int),
            "ph.ecog": standardize(raw["ph.ecog"]),
        }
    )


def build_leukemia(wheel: str) -> pd.DataFrame:
    with zipfile.ZipFile(wheel) as zf:
        raw = pickle.loads(zf.read("SurvSet/resources/pickles/LeukSurv.pickle"))
    return pd.DataFrame(
        {
            "time": raw["time"] / LEUKEMIA_DAYS_PER_YEAR,
            "status": raw["event"].astype(int),
            "age": standardize(raw["num_age"].astype(float)),
            "sex": raw["fac_sex"].astype(int),
            "wbc": standardize(raw["num_wbc"].astype(float)),
            "tpi": standardize(raw["num_tpi"].astype(float)),
        }
    )


def main(argv: list[str]) -> None:
    lifelines_wheel, survset_wheel = argv
    OUT.mkdir(parents=True, exist_ok=True)
    build_lung(lifelines_wheel).to_csv(OUT / "lung.csv", index=False, float_format="%.10g")
    build_leukemia(survset_wheel).to_csv(OUT / "leukemia.csv", index=False, float_format="%.10g")


if __name__ == "__main__":
    main(sys.argv[1:])
