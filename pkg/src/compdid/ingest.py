"""CSV ingestion of repeated cross-sections."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from compdid.core.errors import IngestionError
from compdid.data import Sample, SampleData
from compdid.models.config import ColumnMapping
from compdid.utils.logger import logger


def _numeric(frame: pd.DataFrame, column: str) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(f"unparseable numeric value {frame[column].iloc[row]!r}", row=row + 1, column=column)
    return values


def _binary(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = _numeric(frame, column)
    bad = ~values.isin((0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(f"expected 0/1, got {values.iloc[row]!r}", row=row + 1, column=column)
    return values.to_numpy(dtype=int)


def _integer_codes(frame: pd.DataFrame, column: str, ordered: bool) -> np.ndarray:
    """Ordered columns must be integers; unordered columns may be any labels."""
    if not ordered:
        codes, _ = pd.factorize(frame[column].astype(str), sort=True)
        return codes
    values = _numeric(frame, column)
    bad = values != np.round(values)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(f"ordered covariate must be integer-valued, got {values.iloc[row]!r}",
                             row=row + 1, column=column)
    return values.to_numpy(dtype=int)


def min_max_rescale(values: np.ndarray) -> np.ndarray:
    low, high = np.min(values, axis=0), np.max(values, axis=0)
    span = np.where(high > low, high - low, 1.0)
    return (values - low) / span


def read_frame(path: str | Path, mapping: ColumnMapping) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"could not parse {path}: {e}") from e
    required = [mapping.outcome, mapping.treatment, mapping.period, *mapping.covariates]
    if mapping.cluster:
        required.append(mapping.cluster)
    for column in required:
        if column not in frame.columns:
            raise IngestionError("missing column", column=column)
    return frame


def ingest_frame(frame: pd.DataFrame, mapping: ColumnMapping, rescale_continuous: bool = True) -> SampleData:
    n = len(frame)
    if n == 0:
        raise IngestionError("input contains no observations")
    y = _numeric(frame, mapping.outcome).to_numpy(dtype=float)
    d = _binary(frame, mapping.treatment)
    t = _binary(frame, mapping.period)
    x_c = np.column_stack([_numeric(frame, c).to_numpy(dtype=float) for c in mapping.continuous]) \
        if mapping.continuous else np.zeros((n, 0))
    if rescale_continuous and x_c.shape[1]:
        x_c = min_max_rescale(x_c)
    x_u = np.column_stack([_integer_codes(frame, c, ordered=False) for c in mapping.unordered]) \
        if mapping.unordered else np.zeros((n, 0), dtype=int)
    x_o = np.column_stack([_integer_codes(frame, c, ordered=True) for c in mapping.ordered]) \
        if mapping.ordered else np.zeros((n, 0), dtype=int)
    cluster = frame[mapping.cluster].astype(str).to_numpy() if mapping.cluster else None
    return SampleData(
        y=y, d=d, t=t, x_c=x_c, x_u=x_u, x_o=x_o, cluster=cluster,
        covariate_names={
            "continuous": list(mapping.continuous),
            "unordered": list(mapping.unordered),
            "ordered": list(mapping.ordered),
        },
    )


def ingest_csv(path: str | Path, mapping: ColumnMapping, rescale_continuous: bool = True) -> list[Sample]:
    """Typed observations from a CSV with a header row."""
    return load_sample_data(path, mapping, rescale_continuous).to_samples()


def load_sample_data(path: str | Path, mapping: ColumnMapping, rescale_continuous: bool = True) -> SampleData:
    data = ingest_frame(read_frame(path, mapping), mapping, rescale_continuous)
    logger.info(f"Loaded {data.n} observations from {path}")
    return data
