import io
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from django.conf import settings

from clustering.exceptions import InvalidArgument, ParseError
from clustering.problem import DataMatrix

logger = logging.getLogger('clustering')


def _data_lines(text: str):
    """
    (file line number, line) for every non-blank line
    """
    return [(number, line) for number, line in enumerate(text.splitlines(), start=1) if line.strip()]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, columns_are_observations: bool = False) -> DataMatrix:
    """
    Numeric CSV with one observation per row (per column with
    ``columns_are_observations``). The header row is optional and detected
    when none of its cells is numeric; empty cells are missing entries.
    :param path: file path
    :param columns_are_observations: file is already p x n
    :return: DataMatrix
    """
    text = Path(path).read_text()
    lines = _data_lines(text)
    if not lines:
        raise ParseError('%s contains no data' % path, line=1)
    width = lines[0][1].count(',') + 1
    for number, line in lines:
        if line.count(',') + 1 != width:
            raise ParseError('Line has %i fields, expected %i' % (line.count(',') + 1, width), line=number)

    frame = pd.read_csv(io.StringIO(text), header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    frame = frame.apply(lambda column: column.str.strip())
    first = frame.iloc[0].tolist()
    if not any(_is_number(cell) for cell in first if cell):
        logger.debug('Readers - header detected in %s' % path)
        frame = frame.iloc[1:]
        lines = lines[1:]
    if frame.empty:
        raise ParseError('%s has a header but no data rows' % path, line=2)

    cells = frame.to_numpy()
    empty = cells == ''
    bad = frame.apply(pd.to_numeric, errors='coerce').isna().to_numpy() & ~empty
    if bad.any():
        row, column = np.argwhere(bad)[0]
        raise ParseError('Non-numeric cell %r in column %i' % (cells[row, column], column + 1), line=lines[row][0])
    mask = ~empty
    # numpy parses with correct rounding, 17-digit files read back bit-exact
    values = np.where(empty, '0', cells).astype(float)
    if not columns_are_observations:
        values, mask = values.T, mask.T
    return DataMatrix(values, mask if not mask.all() else None)


def write_csv(data: DataMatrix, path, columns_are_observations: bool = False) -> None:
    """
    Inverse of load_csv: 17 significant digits, unobserved entries left empty
    """
    values = np.array(data.values, dtype=float)
    if data.has_missing:
        values[~data.mask] = np.nan
    frame = pd.DataFrame(values if columns_are_observations else values.T)
    frame.to_csv(path, index=False, header=False, na_rep='', float_format=settings.SONCLUSTER['FLOAT_FORMAT'])


def load_labels(path) -> np.ndarray:
    """
    Integer labels, one per row, from a one-column file or the ``cluster``
    column of a labels CSV
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise ParseError('Labels file %s cannot be parsed - %s' % (path, str(e)))
    if frame.shape[0] and not _is_number(frame.iloc[0, -1]):
        frame = frame.iloc[1:]
    try:
        return frame.iloc[:, -1].astype(np.int64).to_numpy()
    except ValueError as e:
        raise ParseError('Labels in %s must be integers - %s' % (path, str(e)))


def load_config(path) -> dict:
    """
    YAML run configuration, keys named like the command flags
    """
    try:
        with open(path) as file:
            config = yaml.safe_load(file)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ParseError('Configuration %s is not valid YAML - %s' % (path, e.problem), line=line)
    except yaml.YAMLError as e:
        raise ParseError('Configuration %s is not valid YAML - %s' % (path, str(e)))
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise InvalidArgument('Configuration %s must be a mapping of flag names to values' % path)
    return {str(key).replace('-', '_'): value for key, value in config.items()}
