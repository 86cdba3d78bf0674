""" Module for reading and writing tables and manifests """
import io
import json
import logging
import os
import tempfile
from typing import Any, Iterable, Type, Union

import pandas as pd

from svnet import utils
from svnet.exceptions import DataException
from svnet.store.tables import Table

FLOAT_FORMAT = '%.17g'

log = logging.getLogger(utils.APP_NAME)


def atomic_write(path: str, content: Union[str, bytes]) -> None:
    """Write a file through a temporary file in the same directory and a rename.

    :param path: destination path; parent directories are created if needed.
    :param content: text (written as UTF-8) or bytes.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    data = content.encode('utf-8') if isinstance(content, str) else content
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-',
                                    suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def frame_to_csv(table: Type[Table], frame: pd.DataFrame) -> str:
    """Render a frame in the column order of the table.

    :param table: table layout.
    :param frame: data; extra columns are dropped, missing ones raise.
    :return: CSV text with a header line.
    """
    missing = [c for c in table.columns if c not in frame.columns]
    if missing:
        raise DataException(f'{table.name}: missing columns {", ".join(missing)}')
    buf = io.StringIO()
    frame.loc[:, list(table.columns)].to_csv(buf, index=False, float_format=FLOAT_FORMAT,
                                             na_rep='', lineterminator='\n')
    return buf.getvalue()


def write_frame(table: Type[Table], frame: pd.DataFrame, path: str) -> None:
    atomic_write(path, frame_to_csv(table, frame))
    log.debug(f'Wrote {len(frame)} {table.name} rows to {path}')


def write_rows(table: Type[Table], rows: Iterable[Any], path: str) -> None:
    """Function for writing records into a table file.

    :param table: table layout.
    :param rows: tuples in column order, or mappings keyed by column name.
    :param path: destination path.
    """
    frame = pd.DataFrame.from_records(list(rows), columns=list(table.columns))
    if frame.empty:
        atomic_write(path, table.header() + '\n')
        return
    write_frame(table, frame, path)


def read_rows(table: Type[Table], path_or_buffer: Any) -> pd.DataFrame:
    """Function for reading a table file.

    :param table: table layout.
    :param path_or_buffer: path or text buffer.
    :return: frame with the table's dtypes.
    """
    try:
        frame = pd.read_csv(path_or_buffer, dtype=table.dtypes, keep_default_na=False,
                            na_values=[''], float_precision='round_trip')
    except (OSError, ValueError) as ex:
        raise DataException(f'Unable to read {table.name} table: {ex}')
    missing = [c for c in table.columns if c not in frame.columns]
    if missing:
        raise DataException(f'{table.name}: missing columns {", ".join(missing)}')
    return frame.loc[:, list(table.columns)]


def write_json(obj: Any, path: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=utils.json_default)
    atomic_write(path, text + '\n')


def read_json(path: str) -> Any:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except (OSError, ValueError) as ex:
        raise DataException(f'Unable to read {path}: {ex}')
