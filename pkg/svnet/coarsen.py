"""
Time coarsening: turn each trader's asynchronous trades into synchronous discrete states
on a grid of slices of length delta_t.
"""
import datetime
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from svnet import utils
from svnet.exceptions import ConfigException
from svnet.ingest import SessionCalendar, TradeSet
from svnet.metadata import ACTIVE, INACTIVE, StateAlphabet, StateEnum, state_label
from svnet.store import api as store_api
from svnet.store.tables import StateTable

log = logging.getLogger(utils.APP_NAME)

DEFAULT_RHO0 = 0.01
NA = int(StateEnum.NA)


def as_seconds(value: float, name: str = 'delta_t') -> int:
    """Timescales are whole seconds."""
    if not isinstance(value, (int, np.integer)):
        if not float(value).is_integer():
            raise ConfigException(f'{name} must be a whole number of seconds: {value}')
    return int(value)


@dataclass(frozen=True)
class SliceGrid:
    """
    Slices of `delta_t` seconds fully inside the session of each day in `days`. Slice k
    of a day covers [start + k * delta_t, start + (k + 1) * delta_t).
    """
    delta_t: int
    session_seconds: int
    slices_per_day: int
    days: range

    @property
    def n_slices(self) -> int:
        return len(self.days) * self.slices_per_day

    def slice_id(self, day: int, k: int) -> int:
        if day not in self.days or not 0 <= k < self.slices_per_day:
            raise IndexError(f'no slice ({day}, {k}) in grid')
        return (day - self.days.start) * self.slices_per_day + k

    def locate(self, slice_id: int) -> Tuple[int, int]:
        if not 0 <= slice_id < self.n_slices:
            raise IndexError(f'no slice {slice_id} in grid')
        day, k = divmod(slice_id, self.slices_per_day)
        return self.days.start + day, k

    def bounds_ms(self, k: int) -> Tuple[int, int]:
        """Session offsets of slice k, in milliseconds."""
        dt_ms = self.delta_t * 1000
        return k * dt_ms, (k + 1) * dt_ms


def slice_grid(cal: SessionCalendar, delta_t: float, window: range) -> SliceGrid:
    """
    Build the slice grid of a calibration window.

    :param cal: session calendar
    :param delta_t: slice length in seconds
    :param window: day positions covered
    :return: grid with floor(S / delta_t) slices per day; a trailing partial slice is
    dropped
    :raises ConfigException: if delta_t is not positive or longer than the session
    """
    dt = as_seconds(delta_t)
    if dt <= 0:
        raise ConfigException(f'delta_t must be positive, got {delta_t}')
    session = cal.session_seconds
    if dt > session:
        raise ConfigException(f'delta_t = {dt} s is longer than the {session} s session')
    return SliceGrid(delta_t=dt, session_seconds=session,
                     slices_per_day=session // dt, days=window)


class Imbalance(NamedTuple):
    v: float
    a: float
    # None when inactive
    rho: Optional[float]


def trader_imbalance(volumes: Sequence[float]) -> Imbalance:
    """Net volume, turnover and imbalance ratio of the trades of one cell."""
    v = float(math.fsum(volumes))
    a = float(math.fsum(abs(x) for x in volumes))
    if a == 0:
        return Imbalance(v, a, None)
    return Imbalance(v, a, v / a)


def assign_state(rho: Optional[float], rho0: float = DEFAULT_RHO0) -> int:
    if rho is None or math.isnan(rho):
        return NA
    if rho > rho0:
        return int(StateEnum.BUY)
    if rho < -rho0:
        return int(StateEnum.SELL)
    return int(StateEnum.NEUTRAL)


def assign_states(rho: np.ndarray, rho0: float = DEFAULT_RHO0) -> np.ndarray:
    """Vectorized assign_state; NaN marks inactive cells."""
    states = np.full(rho.shape, INACTIVE, dtype='int8')
    with np.errstate(invalid='ignore'):
        states[rho > rho0] = int(StateEnum.BUY)
        states[rho < -rho0] = int(StateEnum.SELL)
    states[np.isnan(rho)] = NA
    return states


def _check_rho0(rho0: float) -> None:
    if not 0 < rho0 < 1:
        raise ConfigException(f'rho0 must lie in (0, 1), got {rho0}')


@dataclass(frozen=True, eq=False)
class StateMatrix:
    """
    Traders x slices matrices: states, net volume v, turnover a and trade counts.
    Only traders with at least one trade in the grid are listed.
    """
    traders: Tuple[str, ...]
    grid: SliceGrid
    dates: Tuple[datetime.date, ...]
    rho0: float
    alphabet: StateAlphabet
    states: np.ndarray
    net_volume: np.ndarray
    turnover: np.ndarray
    n_trades: np.ndarray

    @property
    def n_traders(self) -> int:
        return len(self.traders)

    @property
    def active(self) -> np.ndarray:
        return self.turnover > 0

    def active_slices(self) -> np.ndarray:
        return self.active.sum(axis=1)

    def row(self, trader_id: str) -> np.ndarray:
        return self.states[self.traders.index(trader_id)]

    def to_frame(self) -> pd.DataFrame:
        n, t = self.states.shape
        per_day = self.grid.slices_per_day
        day_pos = np.tile(np.repeat(np.arange(len(self.grid.days)), per_day), n)
        labels = np.array([d.isoformat() for d in self.dates], dtype=object)
        return pd.DataFrame({
            'trader_id': np.repeat(np.asarray(self.traders, dtype=object), t),
            'day': labels[day_pos] if n else np.array([], dtype=object),
            'slice': np.tile(np.arange(t) % per_day, n),
            'state': [state_label(s) for s in self.states.ravel()],
            'v': self.net_volume.ravel(),
            'a': self.turnover.ravel(),
            'n_trades': self.n_trades.ravel(),
        })


def cell_aggregates(ts: TradeSet, grid: SliceGrid) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Per (trader, slice) sums over the trades of the grid.

    :return: trader codes (into ts.traders) of the traders present, net volume,
    turnover and trade counts, each of shape (n_present, n_slices)
    """
    dt_ms = grid.delta_t * 1000
    k = ts.offsets // dt_ms
    mask = ((ts.day_index >= grid.days.start) & (ts.day_index < grid.days.stop)
            & (k < grid.slices_per_day))
    present, rows = np.unique(ts.trader_index[mask], return_inverse=True)
    n, t = present.shape[0], grid.n_slices
    cols = (ts.day_index[mask] - grid.days.start) * grid.slices_per_day + k[mask]
    cells = rows * t + cols
    volumes = ts.volumes[mask]
    v = np.bincount(cells, weights=volumes, minlength=n * t).reshape(n, t)
    a = np.bincount(cells, weights=np.abs(volumes), minlength=n * t).reshape(n, t)
    c = np.bincount(cells, minlength=n * t).reshape(n, t).astype('int32')
    return present, v, a, c


def state_matrix(ts: TradeSet, grid: SliceGrid, rho0: float = DEFAULT_RHO0,
                 alphabet: StateAlphabet = StateAlphabet.SIGNED) -> StateMatrix:
    """
    Determine the state of every trader in every slice of the grid.

    :param ts: session-filtered trades
    :param grid: slice grid built on the same calendar
    :param rho0: dead-zone threshold on the imbalance ratio
    :param alphabet: signed states or active/inactive states
    :return: state matrix; trades in dropped trailing slices do not count
    """
    _check_rho0(rho0)
    if grid.session_seconds != ts.calendar.session_seconds:
        raise ConfigException('Slice grid and trade set use different sessions')
    present, v, a, c = cell_aggregates(ts, grid)
    if alphabet is StateAlphabet.ACTIVITY:
        states = np.where(a > 0, ACTIVE, INACTIVE).astype('int8')
    else:
        rho = np.full(v.shape, np.nan)
        np.divide(v, a, out=rho, where=a > 0)
        states = assign_states(np.clip(rho, -1.0, 1.0), rho0)
    dates = tuple(ts.days[d] for d in grid.days) if ts.days else ()
    log.debug(f'State matrix dt={grid.delta_t}: {present.shape[0]} traders x '
              f'{grid.n_slices} slices')
    return StateMatrix(traders=tuple(ts.traders[i] for i in present), grid=grid,
                       dates=dates, rho0=rho0, alphabet=alphabet, states=states,
                       net_volume=v, turnover=a, n_trades=c)


def export_states(sm: StateMatrix, path: str) -> None:
    store_api.write_frame(StateTable, sm.to_frame(), path)
