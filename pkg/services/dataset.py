"""
Dataset Service
Ingests per-market CSV series, aligns trading calendars and produces the
differenced/standardized matrices consumed by the discovery algorithms.
"""

import logging
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.errors import DatasetError

logger = logging.getLogger(__name__)

DATE_COLUMN = 'Date'
DATE_PATTERN = re.compile(r'^\d{4}-\d{2}-\d{2}$')


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """Aligned, gap-free multivariate daily series with a date index."""

    variable_names: Tuple[str, ...]
    dates: Tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        names = tuple(str(name) for name in self.variable_names)
        dates = tuple(pd.Timestamp(d).date() for d in self.dates)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise DatasetError(f"values must be a T x n matrix, got {values.ndim} dimensions")
        if len(set(names)) != len(names):
            raise DatasetError(f"variable names are not unique: {list(names)}")
        if values.shape[1] != len(names):
            raise DatasetError(
                f"{values.shape[1]} columns but {len(names)} variable names")
        if values.shape[0] != len(dates):
            raise DatasetError(f"{values.shape[0]} rows but {len(dates)} dates")
        if not np.all(np.isfinite(values)):
            raise DatasetError("dataset contains missing or non-finite values")
        if any(later <= earlier for earlier, later in zip(dates, dates[1:])):
            raise DatasetError("dates must be strictly increasing")
        values.setflags(write=False)
        object.__setattr__(self, 'variable_names', names)
        object.__setattr__(self, 'dates', dates)
        object.__setattr__(self, 'values', values)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.variable_names.index(name)
        except ValueError:
            raise DatasetError(f"unknown variable '{name}'") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index_of(name)]

    def select(self, names: Sequence[str]) -> 'TimeSeriesDataset':
        """Return a dataset restricted to (and ordered by) the given variables."""
        idx = [self.index_of(name) for name in names]
        return TimeSeriesDataset(tuple(names), self.dates, self.values[:, idx])

    def slice(self, start: Optional[date] = None, end: Optional[date] = None) -> 'TimeSeriesDataset':
        """Restrict to the inclusive date range [start, end]."""
        keep = [i for i, d in enumerate(self.dates)
                if (start is None or d >= start) and (end is None or d <= end)]
        if not keep:
            raise DatasetError(f"no observations between {start} and {end}")
        return TimeSeriesDataset(self.variable_names,
                                 tuple(self.dates[i] for i in keep),
                                 self.values[keep])

    def with_values(self, values: np.ndarray, dates: Optional[Sequence[date]] = None) -> 'TimeSeriesDataset':
        return TimeSeriesDataset(self.variable_names,
                                 self.dates if dates is None else tuple(dates),
                                 values)

    def to_frame(self) -> pd.DataFrame:
        index = pd.DatetimeIndex(pd.to_datetime(list(self.dates)), name=DATE_COLUMN)
        return pd.DataFrame(np.array(self.values), index=index, columns=list(self.variable_names))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'TimeSeriesDataset':
        return cls(tuple(frame.columns), tuple(frame.index), frame.to_numpy(dtype=float))


@dataclass(frozen=True)
class TransformStep:
    """One applied transform; differencing keeps the levels it consumed."""

    kind: str
    order: int = 0
    mean: float = 0.0
    scale: float = 1.0
    initial: Tuple[float, ...] = ()

    def to_document(self) -> Dict:
        doc = {'kind': self.kind}
        if self.kind == 'difference':
            doc.update(order=self.order, initial=list(self.initial))
        else:
            doc.update(mean=self.mean, scale=self.scale)
        return doc


@dataclass(frozen=True)
class TransformLog:
    """Per-variable ordered list of applied transforms."""

    steps: Dict[str, Tuple[TransformStep, ...]] = field(default_factory=dict)

    def then(self, other: 'TransformLog') -> 'TransformLog':
        names = list(self.steps) + [n for n in other.steps if n not in self.steps]
        return TransformLog({n: self.steps.get(n, ()) + other.steps.get(n, ()) for n in names})

    def replay(self, ds: TimeSeriesDataset) -> TimeSeriesDataset:
        """Re-apply the logged transforms to raw level data."""
        columns = []
        dates = list(ds.dates)
        for name in ds.variable_names:
            x = ds.column(name).copy()
            kept_dates = list(ds.dates)
            for step in self.steps.get(name, ()):
                if step.kind == 'difference':
                    x = np.diff(x, n=step.order)
                    kept_dates = kept_dates[step.order:]
                elif step.kind == 'standardize':
                    x = (x - step.mean) / step.scale
                else:
                    raise DatasetError(f"unknown transform '{step.kind}'")
            columns.append(x)
            dates = kept_dates
        return TimeSeriesDataset(ds.variable_names, tuple(dates), np.column_stack(columns))

    def to_document(self) -> Dict[str, List[Dict]]:
        return {name: [step.to_document() for step in steps] for name, steps in self.steps.items()}


@dataclass(frozen=True)
class UnparsedRow:
    path: str
    row: int
    column: str
    raw: str


@dataclass(frozen=True)
class IngestResult:
    """Per-variable level series plus every row that could not be parsed."""

    series: Dict[str, TimeSeriesDataset]
    unparsed: Tuple[UnparsedRow, ...] = ()


@dataclass(frozen=True)
class ScatterSummary:
    cause: str
    effect: str
    lag: int
    x: np.ndarray
    y: np.ndarray
    correlation: float

    def to_document(self, include_points: bool = False) -> Dict:
        doc = {'cause': self.cause, 'effect': self.effect, 'lag': self.lag,
               'correlation': self.correlation, 'points': int(len(self.x))}
        if include_points:
            doc['x'] = self.x.tolist()
            doc['y'] = self.y.tolist()
        return doc


def _read_frame(path: str, date_column: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise DatasetError("data file not found", path=str(path)) from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"unreadable CSV: {e}", path=str(path)) from None
    frame.columns = [c.strip() for c in frame.columns]
    if date_column not in frame.columns:
        raise DatasetError(f"missing column '{date_column}'", path=str(path))
    return frame


def _parse_series(path: str, frame: pd.DataFrame, name: str, column: str,
                  date_column: str) -> Tuple[TimeSeriesDataset, List[UnparsedRow]]:
    raw_dates = frame[date_column].str.strip()
    for i, raw in enumerate(raw_dates):
        if not DATE_PATTERN.match(raw) or pd.isna(pd.to_datetime(raw, format='%Y-%m-%d', errors='coerce')):
            raise DatasetError(f"unparseable date '{raw}', expected YYYY-MM-DD", path=str(path), row=i)
    dates = pd.to_datetime(raw_dates, format='%Y-%m-%d')
    duplicated = dates.duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DatasetError(f"duplicate date {raw_dates.iloc[row]}", path=str(path), row=row)

    numbers = pd.to_numeric(frame[column].str.strip().str.replace(',', '', regex=False), errors='coerce')
    bad = numbers.isna().to_numpy()
    unparsed = [UnparsedRow(str(path), int(i), column, str(frame[column].iloc[i]))
                for i in np.flatnonzero(bad)]
    if bad.all():
        raise DatasetError(f"zero parseable rows for column '{column}'", path=str(path))

    series = pd.Series(numbers.to_numpy()[~bad], index=dates.to_numpy()[~bad]).sort_index()
    return TimeSeriesDataset((name,), tuple(series.index), series.to_numpy()), unparsed


def ingest_csv(paths: Sequence[str], variable_map: Mapping[str, str],
               date_column: str = DATE_COLUMN) -> IngestResult:
    """
    Read one level series per variable from a set of CSV files.

    Args:
        paths: CSV files, each with a header row and a YYYY-MM-DD date column
        variable_map: variable name -> column name; the first file holding the
            column supplies the series

    Returns:
        IngestResult with one single-column dataset per variable and the
        rows whose value could not be parsed
    """
    frames = {str(path): _read_frame(str(path), date_column) for path in paths}
    series = {}
    unparsed: List[UnparsedRow] = []
    for name, column in variable_map.items():
        owner = next((p for p, frame in frames.items() if column in frame.columns), None)
        if owner is None:
            raise DatasetError(f"missing column '{column}' for variable '{name}'")
        series[name], bad_rows = _parse_series(owner, frames[owner], name, column, date_column)
        unparsed.extend(bad_rows)
        logger.info(f"Ingested {name} from {owner}: {series[name].n_obs} rows")

    for row in unparsed:
        logger.warning(f"Unparsed value '{row.raw}' in {row.path} row {row.row} column {row.column}")
    return IngestResult(series=series, unparsed=tuple(unparsed))


def align(series: Union[Mapping[str, TimeSeriesDataset], Sequence[TimeSeriesDataset]],
          fill: Optional[str] = None) -> TimeSeriesDataset:
    """
    Join level series on a common trading calendar.

    Args:
        series: datasets to join (single- or multi-column)
        fill: None for an inner join on common dates, 'ffill' to forward-fill
            onto the union calendar

    Returns:
        Aligned dataset ordered by date
    """
    parts = list(series.values()) if isinstance(series, Mapping) else list(series)
    if len(parts) < 2:
        raise DatasetError("align needs at least two series")
    if fill not in (None, 'ffill'):
        raise DatasetError(f"unknown fill option '{fill}'")

    frames = [part.to_frame() for part in parts]
    if fill is None:
        joined = pd.concat(frames, axis=1, join='inner')
    else:
        joined = pd.concat(frames, axis=1, join='outer').sort_index().ffill().dropna()
    if joined.empty:
        raise DatasetError("series share no common dates")

    dropped = max(len(f) for f in frames) - len(joined)
    logger.info(f"Aligned {len(parts)} series on {len(joined)} dates ({dropped} dates dropped)")
    return TimeSeriesDataset.from_frame(joined.sort_index())


def difference(ds: TimeSeriesDataset, order: int = 1) -> Tuple[TimeSeriesDataset, TransformLog]:
    """Apply `order`-fold first differencing to every column."""
    if order < 1:
        raise DatasetError(f"difference order must be >= 1, got {order}")
    if ds.n_obs < order + 1:
        raise DatasetError(f"series too short to difference: {ds.n_obs} rows, order {order}")
    values = np.diff(ds.values, n=order, axis=0)
    log = TransformLog({
        name: (TransformStep('difference', order=order,
                             initial=tuple(float(v) for v in ds.values[:order, j])),)
        for j, name in enumerate(ds.variable_names)
    })
    return ds.with_values(values, ds.dates[order:]), log


def integrate(ds: TimeSeriesDataset, log: TransformLog) -> TimeSeriesDataset:
    """Undo first-order differencing using the levels recorded in the log."""
    columns = []
    for name in ds.variable_names:
        steps = [s for s in log.steps.get(name, ()) if s.kind == 'difference']
        if len(steps) != 1 or steps[0].order != 1:
            raise DatasetError(f"no first-order difference logged for '{name}'")
        first = steps[0].initial[0]
        columns.append(np.concatenate([[first], first + np.cumsum(ds.column(name))]))
    return TimeSeriesDataset(ds.variable_names, _prepend_unknown_date(ds.dates), np.column_stack(columns))


def _prepend_unknown_date(dates: Tuple[date, ...]) -> Tuple[date, ...]:
    first = pd.Timestamp(dates[0]) - pd.offsets.BDay(1)
    return (first.date(),) + tuple(dates)


def standardize(ds: TimeSeriesDataset) -> Tuple[TimeSeriesDataset, TransformLog]:
    """Z-score every column with the sample (n-1) standard deviation."""
    if ds.n_obs < 2:
        raise DatasetError("standardize needs at least two rows")
    means = ds.values.mean(axis=0)
    scales = ds.values.std(axis=0, ddof=1)
    constant = [name for name, s in zip(ds.variable_names, scales) if not s > 0]
    if constant:
        raise DatasetError(f"constant column(s) cannot be standardized: {constant}")
    log = TransformLog({
        name: (TransformStep('standardize', mean=float(means[j]), scale=float(scales[j])),)
        for j, name in enumerate(ds.variable_names)
    })
    return ds.with_values((ds.values - means) / scales), log


def describe(ds: TimeSeriesDataset) -> Dict[str, Dict[str, float]]:
    """Per-variable overview statistics."""
    stats = {}
    for j, name in enumerate(ds.variable_names):
        x = ds.values[:, j]
        stats[name] = {
            'count': int(len(x)),
            'mean': float(x.mean()),
            'std': float(x.std(ddof=1)) if len(x) > 1 else 0.0,
            'min': float(x.min()),
            'max': float(x.max()),
            'first': float(x[0]),
            'last': float(x[-1]),
        }
    return stats


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        return float('nan')
    return float(np.dot(xc, yc) / denom)


def linearity_diagnostics(ds: TimeSeriesDataset, max_lag: int) -> List[ScatterSummary]:
    """
    Paired point sets and Pearson correlations for every ordered variable pair
    and lag 0..max_lag; x is the cause at t-lag, y the effect at t.
    """
    if max_lag < 0:
        raise DatasetError(f"max_lag must be >= 0, got {max_lag}")
    if ds.n_obs <= max_lag + 2:
        raise DatasetError(f"need more than {max_lag + 2} rows for lag {max_lag} diagnostics")
    summaries = []
    T = ds.n_obs
    for cause in ds.variable_names:
        for effect in ds.variable_names:
            for lag in range(max_lag + 1):
                x = ds.column(cause)[:T - lag]
                y = ds.column(effect)[lag:]
                summaries.append(ScatterSummary(cause, effect, lag, x, y, _pearson(x, y)))
    return summaries

