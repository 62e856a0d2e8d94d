"""
CSV ingestion: covariate frames, group mappings, lagged features, row splits and fitted-model reports.
"""
import logging
import re

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from expectile_group_lasso.design import DesignError, GroupedDesign, GroupSpec

SPLITS = ('all', 'learning', 'test')

LAG_SUFFIX = '_lag'

logger = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    design: GroupedDesign
    y: np.ndarray
    response: str
    lags: Tuple[Tuple[str, int], ...] = ()

    @property
    def n(self) -> int:
        return self.design.n

    def rows(self, index) -> 'Dataset':
        return Dataset(self.design.rows(index), self.y[index], self.response, self.lags)


@dataclass(frozen=True, eq=False)
class ModelReport:
    """Coefficients of a fitted model as read back from a fit report."""
    path: str
    names: Tuple[str, ...]
    beta: np.ndarray
    intercept: float
    response: Optional[str]
    lags: Tuple[Tuple[str, int], ...]
    meta: Dict[str, str]


def read_csv(path) -> pd.DataFrame:
    """Read a CSV file with a header row; every column must be numeric."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as error:
        raise DataError('Cannot read CSV file {}: {}'.format(path, error))

    if frame.empty:
        raise DataError('CSV file {} has no data rows'.format(path))

    non_numeric = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if non_numeric:
        raise DataError('Non-numeric columns in {}: {}'.format(path, ', '.join(map(str, non_numeric))))

    frame.columns = [str(c) for c in frame.columns]
    logger.debug('Read %d rows and %d columns from %s', len(frame), len(frame.columns), path)
    return frame


def load_groups(path) -> Dict[str, List[str]]:
    """
    Load a group mapping ``{group_name: [column, ...]}``; declaration order is group order.

    The file is JSON (any YAML mapping is accepted as well).
    """
    try:
        with open(path) as fd:
            mapping = yaml.safe_load(fd)
    except (OSError, yaml.YAMLError) as error:
        raise DataError('Cannot read group mapping {}: {}'.format(path, error))

    if not isinstance(mapping, dict) or not mapping:
        raise DataError('Group mapping {} must be a non-empty mapping of group name to columns'.format(path))

    groups = {}
    for name, columns in mapping.items():
        if isinstance(columns, str):
            columns = [columns]
        if not isinstance(columns, list) or not columns:
            raise DataError('Group {!r} must list at least one column'.format(name))
        groups[str(name)] = [str(c) for c in columns]

    return groups


def parse_lag(text: str) -> Tuple[str, int]:
    """Parse ``column:k`` into ``(column, k)`` with ``k >= 1``."""
    column, sep, k = str(text).rpartition(':')
    if not sep or not column:
        raise DataError('Lag must look like column:k, got {!r}'.format(text))
    try:
        k = int(k)
    except ValueError:
        raise DataError('Lag order must be an integer, got {!r}'.format(text))
    if k < 1:
        raise DataError('Lag order must be positive, got {!r}'.format(text))
    return column, k


def lag_name(column: str, lag: int) -> str:
    return '{}{}{}'.format(column, LAG_SUFFIX, lag)


def add_lags(frame: pd.DataFrame, lags: Sequence[Tuple[str, int]]) -> pd.DataFrame:
    """
    Append ``column_lag1 .. column_lagk`` for every ``(column, k)`` and drop the first ``max k`` rows.
    """
    if not lags:
        return frame

    frame = frame.copy()
    for column, k in lags:
        if column not in frame.columns:
            raise DataError('Cannot lag unknown column {!r}'.format(column))
        for lag in range(1, k + 1):
            frame[lag_name(column, lag)] = frame[column].shift(lag)

    drop = max(k for _, k in lags)
    if drop >= len(frame):
        raise DataError('Lags of order {} leave no rows out of {}'.format(drop, len(frame)))

    return frame.iloc[drop:].reset_index(drop=True)


def _group_layout(covariates: List[str], groups: Optional[Dict[str, List[str]]],
                  lagged: List[str]) -> Tuple[List[str], GroupSpec]:
    if groups is None:
        return covariates, GroupSpec(tuple(1 for _ in covariates), tuple(covariates))

    groups = dict(groups)
    seen = set()
    for name, columns in groups.items():
        unknown = [c for c in columns if c not in covariates]
        if unknown:
            raise DataError('Group {!r} names unknown columns: {}'.format(name, ', '.join(unknown)))
        twice = seen.intersection(columns)
        if twice or len(set(columns)) != len(columns):
            raise DataError('Columns assigned to more than one group: {}'.format(', '.join(sorted(twice) or columns)))
        seen.update(columns)

    for column in lagged:
        if column not in seen:
            groups[column] = [column]
            seen.add(column)

    missing = [c for c in covariates if c not in seen]
    if missing:
        raise DataError('Group mapping does not cover columns: {}'.format(', '.join(missing)))

    ordered = [c for columns in groups.values() for c in columns]
    return ordered, GroupSpec(tuple(len(c) for c in groups.values()), tuple(groups))


def build_dataset(frame: pd.DataFrame, response: str, groups: Optional[Dict[str, List[str]]] = None,
                  lags: Sequence[Tuple[str, int]] = ()) -> Dataset:
    """
    Split ``frame`` into the response column and grouped covariates.

    Without a group mapping every covariate is its own group. Lagged columns missing from the mapping become
    singleton groups.
    """
    if response not in frame.columns:
        raise DataError('Response column {!r} not found'.format(response))

    frame = add_lags(frame, lags)
    lagged = [lag_name(column, lag) for column, k in lags for lag in range(1, k + 1)]
    covariates = [c for c in frame.columns if c != response]
    if not covariates:
        raise DataError('No covariate columns besides the response')

    ordered, spec = _group_layout(covariates, groups, lagged)

    values = frame[ordered].to_numpy(dtype=float)
    y = frame[response].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(y)):
        raise DataError('Missing or non-finite values in the data')

    try:
        design = GroupedDesign(values, spec, tuple(ordered))
    except DesignError as error:
        raise DataError(str(error))

    return Dataset(design=design, y=y, response=response, lags=tuple(lags))


def parse_rows(text: Optional[str], n: int) -> Optional[slice]:
    """Parse a ``start:stop`` row range (0-based, stop exclusive, either end optional) within ``n`` rows."""
    if text is None:
        return None
    match = re.match(r'^\s*(\d*)\s*:\s*(\d*)\s*$', str(text))
    if not match:
        raise DataError('Row range must look like start:stop, got {!r}'.format(text))
    start = int(match.group(1)) if match.group(1) else 0
    stop = int(match.group(2)) if match.group(2) else n
    if not 0 <= start < stop <= n:
        raise DataError('Row range {!r} out of bounds for {} rows'.format(text, n))
    return slice(start, stop)


def split_index(split: str, n: int, learning_rows: Optional[str] = None, test_rows: Optional[str] = None):
    """
    Row index of a split. ``learning`` defaults to all rows; ``test`` defaults to the rows after the learning
    range.
    """
    if split not in SPLITS:
        raise DataError('Unknown split {!r}, expected one of {}'.format(split, ', '.join(SPLITS)))
    if split == 'all':
        return slice(0, n)

    learning = parse_rows(learning_rows, n) or slice(0, n)
    if split == 'learning':
        return learning

    test = parse_rows(test_rows, n)
    if test is None:
        if learning.stop >= n:
            raise DataError('No rows left for the test split after learning rows {}:{}'.format(
                learning.start, learning.stop))
        test = slice(learning.stop, n)
    return test


def read_fit_report(path) -> ModelReport:
    """Read the coefficients, intercept and data preparation of a fit report."""
    try:
        frame = pd.read_csv(path, dtype={'record': str, 'group': str, 'name': str}, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise DataError('Cannot read fit report {}: {}'.format(path, error))

    if not {'record', 'name', 'value'}.issubset(frame.columns):
        raise DataError('{} is not a fit report'.format(path))

    coefficients = frame[frame['record'] == 'coefficient']
    if coefficients.empty:
        raise DataError('Fit report {} has no coefficients'.format(path))

    meta = {str(r['name']): str(r['value']) for _, r in frame[frame['record'] == 'meta'].iterrows()}
    intercepts = frame[frame['record'] == 'intercept']

    try:
        beta = coefficients['value'].astype(float).to_numpy()
        intercept = float(intercepts['value'].iloc[0]) if not intercepts.empty else 0.0
        lags = tuple(parse_lag(t) for t in meta.get('lags', '').split(',') if t)
    except ValueError as error:
        raise DataError('Malformed fit report {}: {}'.format(path, error))

    return ModelReport(
        path=str(path),
        names=tuple(coefficients['name']),
        beta=beta,
        intercept=intercept,
        response=meta.get('response') or None,
        lags=lags,
        meta=meta,
    )


def model_matrix(frame: pd.DataFrame, report: ModelReport, response: Optional[str] = None):
    """Covariates ordered as in ``report`` and the response, after reapplying the report's lags."""
    response = response or report.response
    if not response:
        raise DataError('Report {} does not name a response column; pass one explicitly'.format(report.path))
    if response not in frame.columns:
        raise DataError('Response column {!r} not found'.format(response))

    frame = add_lags(frame, report.lags)
    missing = [c for c in report.names if c not in frame.columns]
    if missing:
        raise DataError('Data lacks the report columns: {}'.format(', '.join(missing)))

    X = frame[list(report.names)].to_numpy(dtype=float)
    y = frame[response].to_numpy(dtype=float)
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError('Missing or non-finite values in the data')
    return X, y
