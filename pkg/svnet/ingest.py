"""
Trade ingestion: parse raw trade records, normalize them and restrict them to the
active trading session of business days.
"""
import datetime
import io
import logging
import re
from dataclasses import dataclass
from typing import (Any, BinaryIO, FrozenSet, List, Mapping, NamedTuple, Optional,
                    Sequence, TextIO, Tuple, Union)

import dateutil.tz
import numpy as np
import pandas as pd

from svnet import utils
from svnet.exceptions import ConfigException, DataException, ParseException
from svnet.store import api as store_api
from svnet.store.tables import TradeTable

log = logging.getLogger(utils.APP_NAME)

_WEEKDAYS = {'mon': 0, 'tue': 1, 'wed': 2, 'thu': 3, 'fri': 4, 'sat': 5, 'sun': 6}


class Trade(NamedTuple):
    trader_id: str
    # milliseconds since epoch, UTC
    timestamp: int
    # positive buy, negative sell
    volume: float


class TradeFormat(NamedTuple):
    """Column names and delimiter of a trade CSV."""
    trader_column: str = 'trader_id'
    timestamp_column: str = 'timestamp_ms'
    volume_column: str = 'volume'
    delimiter: str = ','


def _time_ms(t: datetime.time) -> int:
    return ((t.hour * 60 + t.minute) * 60 + t.second) * 1000 + t.microsecond // 1000


@dataclass(frozen=True)
class SessionCalendar:
    """
    Daily trading session [session_start, session_end) in local time of `timezone`,
    on the weekdays of `business_days` (Monday = 0) that are not holidays.
    """
    session_start: datetime.time = datetime.time(9, 0)
    session_end: datetime.time = datetime.time(17, 0)
    business_days: FrozenSet[int] = frozenset(range(5))
    holidays: FrozenSet[datetime.date] = frozenset()
    timezone: str = 'UTC'

    @property
    def start_ms(self) -> int:
        return _time_ms(self.session_start)

    @property
    def end_ms(self) -> int:
        return _time_ms(self.session_end)

    @property
    def session_ms(self) -> int:
        return self.end_ms - self.start_ms

    @property
    def session_seconds(self) -> int:
        return self.session_ms // 1000

    def is_business_day(self, day: datetime.date) -> bool:
        return day.weekday() in self.business_days and day not in self.holidays

    def business_days_between(self, first: datetime.date,
                              last: datetime.date) -> List[datetime.date]:
        """Business days in the closed range [first, last]."""
        days = np.arange(np.datetime64(first, 'D'), np.datetime64(last, 'D') + 1)
        return [d.item() for d in days[self.business_mask(days)]]

    def business_mask(self, days: np.ndarray) -> np.ndarray:
        weekday = (days.astype('int64') + 3) % 7
        mask = np.isin(weekday, sorted(self.business_days))
        if self.holidays:
            holidays = np.array(sorted(self.holidays), dtype='datetime64[D]')
            mask &= ~np.isin(days, holidays)
        return mask

    def day_start(self, day: datetime.date) -> pd.Timestamp:
        """Start of the session of a day, as a time zone aware timestamp."""
        naive = pd.Timestamp(datetime.datetime.combine(day, self.session_start))
        return naive.tz_localize(self.timezone)


def _parse_weekdays(values: Sequence[Any]) -> FrozenSet[int]:
    days = set()
    for value in values:
        if isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= 6:
            days.add(value)
        elif isinstance(value, str) and value[:3].lower() in _WEEKDAYS:
            days.add(_WEEKDAYS[value[:3].lower()])
        else:
            raise ConfigException(f'Invalid business day: {value!r}')
    return frozenset(days)


def build_calendar(config: Optional[Mapping[str, Any]] = None) -> SessionCalendar:
    """
    Build a session calendar from a configuration mapping (the `[session]` section).

    :param config: keys `session_start`, `session_end`, `holidays`, `business_days`,
    `timezone`; all optional.
    :return: calendar with a half-open daily session
    :raises ConfigException: if the session is empty or a value is invalid
    """
    args = utils.get_args(config or {},
                          defaultable={'session_start': datetime.time(9, 0),
                                       'session_end': datetime.time(17, 0),
                                       'holidays': [],
                                       'business_days': [0, 1, 2, 3, 4],
                                       'timezone': 'UTC'})
    holidays = set()
    for value in args['holidays']:
        day = utils.parse_value(value, datetime.date)
        if isinstance(day, datetime.datetime):
            day = day.date()
        if day is None:
            raise ConfigException(f'Invalid holiday: {value!r}')
        holidays.add(day)
    if dateutil.tz.gettz(args['timezone']) is None:
        raise ConfigException(f'Unknown time zone: {args["timezone"]}')

    cal = SessionCalendar(session_start=args['session_start'],
                          session_end=args['session_end'],
                          business_days=_parse_weekdays(args['business_days']),
                          holidays=frozenset(holidays),
                          timezone=args['timezone'])
    if cal.session_ms <= 0:
        raise ConfigException(f'Session end {cal.session_end} must be after session '
                              f'start {cal.session_start}')
    return cal


@dataclass(frozen=True, eq=False)
class TradeSet:
    """
    Session-filtered trades. Arrays are aligned per trade and sorted by trader, then by
    timestamp. `day_index` points into `days`, the business days spanned by the data;
    `offsets` are milliseconds since the session start of the trade's day.
    """
    calendar: SessionCalendar
    traders: Tuple[str, ...]
    days: Tuple[datetime.date, ...]
    trader_index: np.ndarray
    timestamps: np.ndarray
    volumes: np.ndarray
    day_index: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        for values in (self.trader_index, self.timestamps, self.volumes, self.day_index,
                       self.offsets):
            values.setflags(write=False)

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def n_days(self) -> int:
        return len(self.days)

    def trades_for(self, trader_id: str) -> List[Trade]:
        try:
            code = self.traders.index(trader_id)
        except ValueError:
            return []
        lo, hi = np.searchsorted(self.trader_index, [code, code + 1])
        return [Trade(trader_id, int(t), float(v))
                for t, v in zip(self.timestamps[lo:hi], self.volumes[lo:hi])]

    def to_trades(self) -> List[Trade]:
        return [Trade(self.traders[i], int(t), float(v))
                for i, t, v in zip(self.trader_index, self.timestamps, self.volumes)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'trader_id': np.asarray(self.traders, dtype=object)[self.trader_index]
            if len(self) else np.array([], dtype=object),
            'timestamp_ms': self.timestamps,
            'volume': self.volumes,
        })

    def select_days(self, days: range) -> 'TradeSet':
        """Trades whose day position lies in `days`; day positions are kept."""
        mask = (self.day_index >= days.start) & (self.day_index < days.stop)
        return _subset(self, mask)


def _subset(ts: TradeSet, mask: np.ndarray) -> TradeSet:
    return TradeSet(calendar=ts.calendar, traders=ts.traders, days=ts.days,
                    trader_index=ts.trader_index[mask], timestamps=ts.timestamps[mask],
                    volumes=ts.volumes[mask], day_index=ts.day_index[mask],
                    offsets=ts.offsets[mask])


def _exact_float(value: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return np.nan


def _read_text(source: Union[str, bytes, BinaryIO, TextIO]) -> str:
    if isinstance(source, str):
        try:
            with open(source, 'rb') as f:
                data: Any = f.read()
        except OSError as ex:
            raise DataException(f'Unable to read {source}: {ex.strerror}')
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            return data.decode('utf-8')
        except UnicodeDecodeError as ex:
            raise ParseException(f'input is not UTF-8 text: {ex}')
    return data


def parse_trade_frame(source: Union[str, bytes, BinaryIO, TextIO],
                      fmt: TradeFormat = TradeFormat()) -> pd.DataFrame:
    """
    Parse a trade CSV into a frame with columns trader_id, timestamp_ms, volume.

    :param source: path, bytes or a binary/text stream with a header line
    :param fmt: column names and delimiter
    :return: frame in row order
    :raises ParseException: for the first malformed row, with its line number
    """
    text = _read_text(source)
    try:
        raw = pd.read_csv(io.StringIO(text), sep=fmt.delimiter, dtype=str,
                          keep_default_na=False, na_values=[], skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ParseException('missing header line', line=1)
    except pd.errors.ParserError as ex:
        match = re.search(r'line (\d+)', str(ex))
        raise ParseException(f'wrong number of fields ({ex})',
                             line=int(match.group(1)) if match else None)

    wanted = [fmt.trader_column, fmt.timestamp_column, fmt.volume_column]
    missing = [c for c in wanted if c not in raw.columns]
    if missing:
        raise ParseException(f'missing columns in header: {", ".join(missing)}', line=1)
    extra = [c for c in raw.columns if c not in wanted]
    if extra:
        log.warning(f'Ignoring extra trade columns: {", ".join(map(str, extra))}')

    # blank lines come back as all-missing rows
    blank = raw.isna().all(axis=1)
    raw = raw.loc[~blank, wanted]
    lines = raw.index.to_numpy() + 2

    ids = raw[fmt.trader_column]
    ts = pd.to_numeric(raw[fmt.timestamp_column].str.strip(), errors='coerce')
    # float() rounds correctly, pd.to_numeric can be off by one ulp
    vol = raw[fmt.volume_column].str.strip().map(_exact_float).astype('float64')
    checks = [
        (raw.isna().any(axis=1).to_numpy(), 'wrong number of fields'),
        ((ids.fillna('').str.strip() == '').to_numpy(), 'empty trader id'),
        (~np.isfinite(ts.to_numpy(dtype='float64', na_value=np.nan)),
         'timestamp is not a finite number'),
        (~np.isfinite(vol.to_numpy(dtype='float64', na_value=np.nan)),
         'volume is not a finite number'),
        ((vol == 0).to_numpy(), 'zero volume'),
    ]
    first_bad: Optional[Tuple[int, str]] = None
    for bad, reason in checks:
        if bad.any():
            pos = int(np.argmax(bad))
            if first_bad is None or pos < first_bad[0]:
                first_bad = (pos, reason)
    if first_bad is not None:
        raise ParseException(first_bad[1], line=int(lines[first_bad[0]]))

    return pd.DataFrame({
        'trader_id': ids.str.strip().to_numpy(dtype=object),
        'timestamp_ms': np.floor(ts.to_numpy(dtype='float64')).astype('int64')
        if ts.dtype.kind == 'f' else ts.to_numpy(dtype='int64'),
        'volume': vol.to_numpy(dtype='float64'),
    })


def parse_trades(source: Union[str, bytes, BinaryIO, TextIO],
                 fmt: TradeFormat = TradeFormat()) -> List[Trade]:
    """
    Parse trade records, one Trade per well-formed row, in row order.
    """
    frame = parse_trade_frame(source, fmt)
    return [Trade(i, int(t), float(v)) for i, t, v in
            zip(frame['trader_id'], frame['timestamp_ms'], frame['volume'])]


def _trades_to_frame(trades: Union[Sequence[Trade], pd.DataFrame, TradeSet]) \
        -> pd.DataFrame:
    if isinstance(trades, TradeSet):
        return trades.to_frame()
    if isinstance(trades, pd.DataFrame):
        return trades
    if len(trades) == 0:
        return pd.DataFrame({'trader_id': np.array([], dtype=object),
                             'timestamp_ms': np.array([], dtype='int64'),
                             'volume': np.array([], dtype='float64')})
    ids, stamps, volumes = zip(*trades)
    return pd.DataFrame({'trader_id': np.array(ids, dtype=object),
                         'timestamp_ms': np.array(stamps, dtype='int64'),
                         'volume': np.array(volumes, dtype='float64')})


def serialize_trades(trades: Union[Sequence[Trade], pd.DataFrame, TradeSet]) -> str:
    return store_api.frame_to_csv(TradeTable, _trades_to_frame(trades))


def write_trades(trades: Union[Sequence[Trade], pd.DataFrame, TradeSet],
                 path: str) -> None:
    store_api.atomic_write(path, serialize_trades(trades))


def _empty_trade_set(cal: SessionCalendar) -> TradeSet:
    return TradeSet(calendar=cal, traders=(), days=(),
                    trader_index=np.array([], dtype='int32'),
                    timestamps=np.array([], dtype='int64'),
                    volumes=np.array([], dtype='float64'),
                    day_index=np.array([], dtype='int32'),
                    offsets=np.array([], dtype='int64'))


def _build_trade_set(cal: SessionCalendar, ids: np.ndarray, stamps: np.ndarray,
                     volumes: np.ndarray, days64: np.ndarray,
                     offsets: np.ndarray) -> TradeSet:
    if ids.shape[0] == 0:
        return _empty_trade_set(cal)
    traders, trader_index = np.unique(ids.astype(str), return_inverse=True)
    order = np.lexsort((stamps, trader_index))
    first, last = days64.min(), days64.max()
    span = np.arange(first, last + 1)
    span = span[cal.business_mask(span)]
    day_index = np.searchsorted(span, days64[order])
    return TradeSet(calendar=cal,
                    traders=tuple(str(t) for t in traders),
                    days=tuple(d.item() for d in span),
                    trader_index=trader_index[order].astype('int32'),
                    timestamps=stamps[order],
                    volumes=volumes[order],
                    day_index=day_index.astype('int32'),
                    offsets=offsets[order])


def filter_session(trades: Union[Sequence[Trade], pd.DataFrame, TradeSet],
                   cal: SessionCalendar) -> TradeSet:
    """
    Keep trades whose local time of day lies in [session_start, session_end) on business
    days; group them by trader and sort them by time.

    :param trades: parsed trades, a trade frame, or an existing TradeSet
    :param cal: session calendar
    :return: immutable TradeSet, possibly empty
    """
    frame = _trades_to_frame(trades)
    n_input = len(frame)
    if n_input == 0:
        return _empty_trade_set(cal)

    stamps = frame['timestamp_ms'].to_numpy(dtype='int64')
    local = pd.to_datetime(stamps, unit='ms', utc=True).tz_convert(cal.timezone)
    wall = local.tz_localize(None).to_numpy(dtype='datetime64[ms]')
    days64 = wall.astype('datetime64[D]')
    time_of_day = (wall - days64.astype('datetime64[ms]')).astype('int64')

    mask = cal.business_mask(days64)
    mask &= (time_of_day >= cal.start_ms) & (time_of_day < cal.end_ms)
    log.debug(f'Session filter kept {int(mask.sum())} of {n_input} trades')

    return _build_trade_set(cal,
                            ids=frame['trader_id'].to_numpy(dtype=object)[mask],
                            stamps=stamps[mask],
                            volumes=frame['volume'].to_numpy(dtype='float64')[mask],
                            days64=days64[mask],
                            offsets=time_of_day[mask] - cal.start_ms)


def reverse_session_time(ts: TradeSet) -> TradeSet:
    """
    Reverse the arrow of time within each session: a trade at offset s moves to offset
    S - 1 - s (milliseconds) of the same day, so [a, b) maps onto [S - b, S - a).
    """
    if len(ts) == 0:
        return ts
    offsets = ts.calendar.session_ms - 1 - ts.offsets
    stamps = ts.timestamps - ts.offsets + offsets
    days64 = np.array(ts.days, dtype='datetime64[D]')[ts.day_index]
    ids = np.asarray(ts.traders, dtype=object)[ts.trader_index]
    return _build_trade_set(ts.calendar, ids=ids, stamps=stamps, volumes=ts.volumes,
                            days64=days64, offsets=offsets)
