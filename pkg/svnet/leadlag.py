"""
Lead-lag networks between the groups found at two timescales. Leading group states are
taken over [t - dt1, t) and lagging group states over [t, t + dt2), at alignment times t
that are multiples of max(dt1, dt2) after the session start.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from svnet import utils
from svnet.coarsen import DEFAULT_RHO0, as_seconds
from svnet.community import GroupPartition, GroupStateSeries, aggregate_states
from svnet.exceptions import ConfigException, InsufficientDataException
from svnet.ingest import SessionCalendar, TradeSet
from svnet.metadata import StateAlphabet, StatePair, leadlag_pairs
from svnet.store import api as store_api
from svnet.store.tables import LeadLagLinkTable
from svnet.validate import DEFAULT_ALPHA, bh_threshold, hypergeom_pvalues

log = logging.getLogger(utils.APP_NAME)


def _check_timescales(session_seconds: int, dt1: int, dt2: int) -> None:
    for name, dt in (('dt1', dt1), ('dt2', dt2)):
        if dt <= 0:
            raise ConfigException(f'{name} must be positive, got {dt}')
        if dt > session_seconds:
            raise ConfigException(f'{name} = {dt} s is longer than the '
                                  f'{session_seconds} s session')


def alignment_offsets(session_seconds: int, dt1: float, dt2: float) -> np.ndarray:
    """
    Alignment times of one day in seconds after the session start: k * max(dt1, dt2) for
    k >= 1 such that both the past and the future interval fit in the session.
    """
    dt1, dt2 = as_seconds(dt1, 'dt1'), as_seconds(dt2, 'dt2')
    _check_timescales(session_seconds, dt1, dt2)
    dt_m = max(dt1, dt2)
    k_max = (session_seconds - dt2) // dt_m
    return np.arange(1, k_max + 1, dtype='int64') * dt_m


def alignment_points(cal: SessionCalendar, day, dt1: float,
                     dt2: float) -> List[pd.Timestamp]:
    """Alignment times of a day as time zone aware timestamps; empty if none fit."""
    start = cal.day_start(day)
    return [start + pd.Timedelta(seconds=int(s))
            for s in alignment_offsets(cal.session_seconds, dt1, dt2)]


@dataclass(frozen=True)
class AlignmentGrid:
    delta_t1: int
    delta_t2: int
    session_seconds: int
    days: range

    @property
    def delta_t_m(self) -> int:
        return max(self.delta_t1, self.delta_t2)

    @property
    def offsets(self) -> np.ndarray:
        return alignment_offsets(self.session_seconds, self.delta_t1, self.delta_t2)

    @property
    def points_per_day(self) -> int:
        return (self.session_seconds - self.delta_t2) // self.delta_t_m

    @property
    def n_points(self) -> int:
        return len(self.days) * self.points_per_day


def alignment_grid(cal: SessionCalendar, dt1: float, dt2: float,
                   window: range) -> AlignmentGrid:
    dt1, dt2 = as_seconds(dt1, 'dt1'), as_seconds(dt2, 'dt2')
    _check_timescales(cal.session_seconds, dt1, dt2)
    return AlignmentGrid(delta_t1=dt1, delta_t2=dt2, session_seconds=cal.session_seconds,
                         days=window)


def _group_codes(ts: TradeSet, partition: GroupPartition) -> np.ndarray:
    codes = np.full(len(ts.traders), -1, dtype='int64')
    position = {t: i for i, t in enumerate(ts.traders)}
    for trader, gid in partition.assignment.items():
        if trader in position:
            codes[position[trader]] = gid
    return codes


def interval_aggregates(ts: TradeSet, partition: GroupPartition, grid: AlignmentGrid,
                        future: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Net volume, turnover and trade count of every group over the past (or future)
    interval of every alignment point, from the members' trades.

    :return: three arrays of shape (n_groups, n_points); points are ordered by day,
    then by time
    """
    per_day = grid.points_per_day
    m_ms = grid.delta_t_m * 1000
    offsets = ts.offsets
    if future:
        k = offsets // m_ms
        inside = offsets < k * m_ms + grid.delta_t2 * 1000
    else:
        k = offsets // m_ms + 1
        inside = offsets >= k * m_ms - grid.delta_t1 * 1000
    group = _group_codes(ts, partition)[ts.trader_index]
    mask = (inside & (k >= 1) & (k <= per_day) & (group >= 0)
            & (ts.day_index >= grid.days.start) & (ts.day_index < grid.days.stop))
    n, t = partition.n_groups, grid.n_points
    cols = (ts.day_index[mask] - grid.days.start) * per_day + (k[mask] - 1)
    cells = group[mask] * t + cols
    volumes = ts.volumes[mask]
    v = np.bincount(cells, weights=volumes, minlength=n * t).reshape(n, t)
    a = np.bincount(cells, weights=np.abs(volumes), minlength=n * t).reshape(n, t)
    c = np.bincount(cells, minlength=n * t).reshape(n, t)
    return v, a, c


def _series(v: np.ndarray, a: np.ndarray, c: np.ndarray, rho0: float,
            alphabet: StateAlphabet) -> GroupStateSeries:
    rho, states = aggregate_states(v, a, rho0, alphabet)
    return GroupStateSeries(group_ids=tuple(range(v.shape[0])), net_volume=v,
                            turnover=a, rho=rho, states=states, n_trades=c)


@dataclass(frozen=True, eq=False)
class LeadLagObservations:
    """Past states of the leading groups and future states of the lagging groups at
    every alignment point of a window."""
    grid: AlignmentGrid
    past: GroupStateSeries
    future: GroupStateSeries
    # G1 and G2 are the same partition
    shared_groups: bool
    alphabet: StateAlphabet = StateAlphabet.SIGNED
    window_id: int = 0

    @property
    def n_points(self) -> int:
        return self.grid.n_points

    def past_rates(self) -> np.ndarray:
        """Trades per second of each leading group in each past interval."""
        return self.past.n_trades / float(self.grid.delta_t1)

    def future_rates(self) -> np.ndarray:
        return self.future.n_trades / float(self.grid.delta_t2)


def leadlag_observations(ts: TradeSet, partition1: GroupPartition,
                         partition2: GroupPartition, grid: AlignmentGrid,
                         rho0: float = DEFAULT_RHO0,
                         alphabet: StateAlphabet = StateAlphabet.SIGNED,
                         window_id: int = 0) -> LeadLagObservations:
    """
    Group states recomputed over the exact past and future intervals of each alignment
    point.

    :param ts: trades
    :param partition1: leading groups, found at dt1
    :param partition2: lagging groups, found at dt2
    :param grid: alignment grid of the window
    :param rho0: dead-zone threshold of the group imbalance
    :param alphabet: state alphabet
    :param window_id: calibration window id
    """
    if grid.session_seconds != ts.calendar.session_seconds:
        raise ConfigException('Alignment grid and trade set use different sessions')
    past = _series(*interval_aggregates(ts, partition1, grid, future=False), rho0,
                   alphabet)
    future = _series(*interval_aggregates(ts, partition2, grid, future=True), rho0,
                     alphabet)
    return LeadLagObservations(grid=grid, past=past, future=future,
                               shared_groups=partition1.encoding() ==
                               partition2.encoding(),
                               alphabet=alphabet, window_id=window_id)


class LeadLagLink(NamedTuple):
    src_group: int
    src_state: int
    dst_group: int
    dst_state: int
    p_value: float


@dataclass(frozen=True)
class LeadLagNetwork:
    links: Tuple[LeadLagLink, ...]
    fdr_alpha: float
    delta_t1: int
    delta_t2: int
    n_groups1: int
    n_groups2: int
    shared_groups: bool
    window_id: int = 0
    n_points: int = 0
    n_tests: int = 0

    def __len__(self) -> int:
        return len(self.links)

    def linked_pairs(self) -> List[Tuple[int, int]]:
        """Distinct (leading group, lagging group) pairs with at least one link."""
        return sorted({(link.src_group, link.dst_group) for link in self.links})

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_records(self.links, columns=list(LeadLagLink._fields))
        frame.insert(0, 'window_id', self.window_id)
        frame.insert(1, 'dt1', self.delta_t1)
        frame.insert(2, 'dt2', self.delta_t2)
        return frame


def build_llsvn(obs: LeadLagObservations, alpha: float = DEFAULT_ALPHA,
                pairs: Optional[Iterable[StatePair]] = None,
                pool_state_pairs: bool = True,
                dependence: str = 'independent') -> LeadLagNetwork:
    """
    Validate directed links (g1, s1) -> (g2, s2) with the hypergeometric test over the
    alignment points of the window.

    :param obs: lead-lag observations
    :param alpha: false discovery rate
    :param pairs: state pairs tested; all pairs of the alphabet by default
    :param pool_state_pairs: one FDR correction over every state pair, with
    m = |G1| * |G2| * number of pairs; otherwise one correction per state pair
    :param dependence: FDR dependence mode
    :raises InsufficientDataException: without groups or alignment points
    """
    g1, g2 = len(obs.past.group_ids), len(obs.future.group_ids)
    if g1 == 0 or g2 == 0:
        raise InsufficientDataException(
            f'Window {obs.window_id}: lead-lag needs leading and lagging groups, got '
            f'{g1} and {g2}')
    if obs.n_points == 0:
        raise InsufficientDataException(f'Window {obs.window_id}: no alignment points')
    pairs = list(leadlag_pairs(obs.alphabet) if pairs is None else pairs)
    t = obs.n_points
    tested = []
    for s1, s2 in pairs:
        x1 = (obs.past.states == s1).astype('float64')
        x2 = (obs.future.states == s2).astype('float64')
        n_pq = np.rint(x1 @ x2.T).astype('int64')
        n_p = x1.sum(axis=1).astype('int64')[:, None]
        n_q = x2.sum(axis=1).astype('int64')[None, :]
        tested.append((s1, s2, hypergeom_pvalues(t, n_p, n_q, n_pq)))

    if pool_state_pairs:
        pooled = np.concatenate([p.ravel() for _, _, p in tested])
        mask = bh_threshold(pooled, alpha, m=pooled.shape[0],
                            dependence=dependence).rejected
        masks = np.split(mask, len(tested))
    else:
        masks = [bh_threshold(p.ravel(), alpha, m=p.size, dependence=dependence).rejected
                 for _, _, p in tested]

    links = []
    for (s1, s2, p), rejected in zip(tested, masks):
        for flat in np.flatnonzero(rejected):
            i, j = divmod(int(flat), g2)
            links.append(LeadLagLink(i, int(s1), j, int(s2), float(p[i, j])))
    links.sort()
    return LeadLagNetwork(links=tuple(links), fdr_alpha=alpha,
                          delta_t1=obs.grid.delta_t1, delta_t2=obs.grid.delta_t2,
                          n_groups1=g1, n_groups2=g2, shared_groups=obs.shared_groups,
                          window_id=obs.window_id, n_points=t,
                          n_tests=g1 * g2 * len(pairs))


class LinkTaxonomy(NamedTuple):
    n_links: int
    # None unless leading and lagging groups are the same partition
    n_self: Optional[int]
    n_cross: Optional[int]
    n_only_self_groups: Optional[int]
    n_dual: int


def classify_links(net: LeadLagNetwork) -> LinkTaxonomy:
    """
    Count self-referential links (g -> g), cross links, groups whose links are all
    self-referential, and dual links: (g1, s1, g2) keys reaching g2 in two or more
    distinct states.
    """
    targets = {}
    for link in net.links:
        targets.setdefault((link.src_group, link.src_state, link.dst_group),
                           set()).add(link.dst_state)
    n_dual = sum(1 for states in targets.values() if len(states) > 1)
    if not net.shared_groups:
        return LinkTaxonomy(len(net.links), None, None, None, n_dual)

    n_self = sum(1 for link in net.links if link.src_group == link.dst_group)
    touched = {}
    for link in net.links:
        is_self = link.src_group == link.dst_group
        for group in (link.src_group, link.dst_group):
            touched[group] = touched.get(group, True) and is_self
    return LinkTaxonomy(len(net.links), n_self, len(net.links) - n_self,
                        sum(1 for only_self in touched.values() if only_self), n_dual)


def export_llsvn(net: LeadLagNetwork, path: str) -> None:
    store_api.write_frame(LeadLagLinkTable, net.to_frame(), path)
