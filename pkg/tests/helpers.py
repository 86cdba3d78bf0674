"""
Builders shared by the test modules
"""
import datetime
from typing import Iterable, Sequence, Tuple

import numpy as np

from svnet.coarsen import SliceGrid, StateMatrix
from svnet.ingest import SessionCalendar, Trade, TradeSet, filter_session
from svnet.metadata import StateAlphabet, StateEnum

CAL = SessionCalendar()
# Monday
MONDAY = datetime.date(2024, 1, 1)


def ms(day: datetime.date, hour: int, minute: int = 0, second: int = 0,
       millis: int = 0) -> int:
    """Epoch milliseconds of a UTC wall clock time."""
    moment = datetime.datetime(day.year, day.month, day.day, hour, minute, second,
                               tzinfo=datetime.timezone.utc)
    return int(moment.timestamp()) * 1000 + millis


def session_ms(day: datetime.date, offset_s: float) -> int:
    """Epoch milliseconds of an offset (seconds) after 09:00 of a day."""
    return ms(day, 9) + int(round(offset_s * 1000))


def trade_set(trades: Iterable[Tuple[str, int, float]],
              cal: SessionCalendar = CAL) -> TradeSet:
    return filter_session([Trade(*t) for t in trades], cal)


def state_matrix_of(rows: Sequence[Sequence[int]], traders: Sequence[str] = (),
                    delta_t: int = 300) -> StateMatrix:
    """State matrix with given states; buys and sells have unit volume, neutral slices
    a balanced pair of trades, NA slices no trades."""
    states = np.asarray(rows, dtype='int8')
    n, t = states.shape
    traders = tuple(traders) or tuple(f't{i:02d}' for i in range(n))
    net = np.where(states == StateEnum.BUY, 1.0,
                   np.where(states == StateEnum.SELL, -1.0, 0.0))
    turnover = np.where(states == StateEnum.NA, 0.0,
                        np.where(states == StateEnum.NEUTRAL, 2.0, 1.0))
    grid = SliceGrid(delta_t=delta_t, session_seconds=28800, slices_per_day=t,
                     days=range(1))
    return StateMatrix(traders=traders, grid=grid, dates=(MONDAY,), rho0=0.01,
                       alphabet=StateAlphabet.SIGNED, states=states, net_volume=net,
                       turnover=turnover, n_trades=turnover.astype('int32'))
