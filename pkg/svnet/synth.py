"""
Synthetic markets with planted trader groups and planted lead-lag couplings between
groups across timescales.
"""
import datetime
import logging
from dataclasses import dataclass, field, replace
from typing import (Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence,
                    Tuple)

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import adjusted_rand_score

from svnet import utils
from svnet.community import GroupPartition
from svnet.exceptions import ConfigException
from svnet.ingest import SessionCalendar, TradeSet, build_calendar, filter_session
from svnet.store import api as store_api

log = logging.getLogger(utils.APP_NAME)

# cap on trades injected per target member and coupling event
_MAX_INJECTED = 50


class Coupling(NamedTuple):
    """Past state of `source` over tau1 seconds drives the state of `target` over the
    next tau2 seconds with probability beta. Groups are indices into group_sizes."""
    source: int
    tau1: int
    target: int
    tau2: int
    beta: float


def asymmetric_couplings(source: int, target: int, coarse_s: int, fine_s: int,
                         beta_coarse_fine: float, beta_fine_coarse: float) \
        -> Tuple[Coupling, Coupling]:
    """Coarse-past to fine-future coupling and its reverse."""
    return (Coupling(source, coarse_s, target, fine_s, beta_coarse_fine),
            Coupling(source, fine_s, target, coarse_s, beta_fine_coarse))


@dataclass(frozen=True)
class SynthConfig:
    n_traders: int = 50
    group_sizes: Tuple[int, ...] = (5, 5)
    # trades per base slice of a trader outside group events
    base_rate: float = 0.5
    # per trader baseline rates, overriding base_rate when given
    trader_rates: Tuple[float, ...] = ()
    slice_s: int = 300
    # group events cover whole blocks of event_s seconds from the session start
    event_s: int = 1800
    # probability that a group event covers a block
    event_rate: float = 0.5
    # per group event probabilities, overriding event_rate when given
    event_rates: Tuple[float, ...] = ()
    # trades per base slice of a member during an event of its group
    event_intensity: float = 1.0
    # probability that a member trade follows the common direction of an event or of
    # a fired coupling
    sync_prob: float = 0.9
    couplings: Tuple[Coupling, ...] = ()
    # injected trades per target member relative to the source's past trading rate
    coupling_gain: float = 1.0
    n_days: int = 60
    start_day: datetime.date = datetime.date(2024, 1, 1)
    volume_mu: float = 0.0
    volume_sigma: float = 1.0
    seed: int = 0
    calendar: SessionCalendar = field(default_factory=SessionCalendar)

    @property
    def trader_ids(self) -> Tuple[str, ...]:
        return tuple(str(i) for i in range(1, self.n_traders + 1))

    def groups(self) -> List[Tuple[str, ...]]:
        """Members of each planted group: consecutive ids from 1."""
        ids = self.trader_ids
        out, start = [], 0
        for size in self.group_sizes:
            out.append(ids[start:start + size])
            start += size
        return out

    def baseline_rates(self) -> np.ndarray:
        if self.trader_rates:
            return np.asarray(self.trader_rates, dtype='float64')
        return np.full(self.n_traders, self.base_rate)

    def group_event_rates(self) -> np.ndarray:
        if self.event_rates:
            return np.asarray(self.event_rates, dtype='float64')
        return np.full(len(self.group_sizes), self.event_rate)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_traders': self.n_traders, 'group_sizes': list(self.group_sizes),
            'base_rate': self.base_rate, 'trader_rates': list(self.trader_rates),
            'slice_s': self.slice_s, 'event_s': self.event_s,
            'event_rate': self.event_rate, 'event_rates': list(self.event_rates),
            'event_intensity': self.event_intensity, 'sync_prob': self.sync_prob,
            'couplings': [c._asdict() for c in self.couplings],
            'coupling_gain': self.coupling_gain,
            'n_days': self.n_days, 'start_day': self.start_day,
            'volume_mu': self.volume_mu, 'volume_sigma': self.volume_sigma,
            'seed': self.seed,
        }


def _check(cfg: SynthConfig) -> SynthConfig:
    session = cfg.calendar.session_seconds
    if not cfg.calendar.business_days:
        raise ConfigException('The session calendar has no business days')
    if cfg.n_traders < 1 or cfg.n_days < 1:
        raise ConfigException('n_traders and n_days must be positive')
    if any(size < 1 for size in cfg.group_sizes) or sum(cfg.group_sizes) > cfg.n_traders:
        raise ConfigException(f'Group sizes {list(cfg.group_sizes)} do not fit '
                              f'{cfg.n_traders} traders')
    if cfg.trader_rates and len(cfg.trader_rates) != cfg.n_traders:
        raise ConfigException(f'trader_rates needs {cfg.n_traders} values, got '
                              f'{len(cfg.trader_rates)}')
    if cfg.event_rates and len(cfg.event_rates) != len(cfg.group_sizes):
        raise ConfigException(f'event_rates needs {len(cfg.group_sizes)} values, got '
                              f'{len(cfg.event_rates)}')
    rates = np.concatenate([[cfg.base_rate, cfg.event_intensity, cfg.coupling_gain],
                            cfg.baseline_rates()])
    if not (np.isfinite(rates).all() and (rates >= 0).all()):
        raise ConfigException('Rates and coupling_gain must be finite and not negative')
    probabilities = np.concatenate([[cfg.event_rate, cfg.sync_prob],
                                    cfg.group_event_rates()])
    if not ((probabilities >= 0) & (probabilities <= 1)).all():
        raise ConfigException('event_rate, event_rates and sync_prob must lie in [0, 1]')
    if not 0 < cfg.slice_s <= session:
        raise ConfigException(f'slice_s must lie in (0, {session}]')
    if cfg.event_s < cfg.slice_s or cfg.event_s % cfg.slice_s:
        raise ConfigException(f'event_s must be a multiple of slice_s ({cfg.slice_s})')
    if cfg.volume_sigma < 0:
        raise ConfigException('volume_sigma must not be negative')
    for c in cfg.couplings:
        n_groups = len(cfg.group_sizes)
        if not (0 <= c.source < n_groups and 0 <= c.target < n_groups):
            raise ConfigException(f'Coupling {tuple(c)} refers to an unknown group')
        if not (0 < c.tau1 <= session and 0 < c.tau2 <= session):
            raise ConfigException(f'Coupling {tuple(c)} timescales must lie in '
                                  f'(0, {session}]')
        if not 0 <= c.beta <= 1:
            raise ConfigException(f'Coupling {tuple(c)} beta must lie in [0, 1]')
    return cfg


def _parse_coupling(value: Mapping[str, Any]) -> Coupling:
    args = utils.get_args(value, required={'source': int, 'tau1': int, 'target': int,
                                           'tau2': int, 'beta': float})
    return Coupling(**args)


def _numbers(name: str, values: List[Any], kind: type) -> Tuple[Any, ...]:
    parsed = [utils.parse_value(v, kind) for v in values]
    if any(v is None for v in parsed):
        raise ConfigException(f'{name} must be a list of {kind.__name__} values')
    return tuple(parsed)


def synth_config(config: Optional[Mapping[str, Any]] = None,
                 calendar: Optional[SessionCalendar] = None) -> SynthConfig:
    """
    Build a synthetic market configuration from the `[synth]` section of a
    configuration mapping. Couplings are given as an array of tables with keys source,
    tau1, target, tau2 and beta; an `asymmetry` table with keys source, target,
    coarse_s, fine_s, beta_coarse_fine and beta_fine_coarse adds a coupling pair.

    :raises ConfigException: for invalid values
    """
    config = dict(config or {})
    base = SynthConfig()
    couplings = [_parse_coupling(c) for c in config.pop('couplings', [])]
    asymmetry = config.pop('asymmetry', None)
    if asymmetry is not None:
        couplings.extend(asymmetric_couplings(**utils.get_args(
            asymmetry, required={'source': int, 'target': int, 'coarse_s': int,
                                 'fine_s': int, 'beta_coarse_fine': float,
                                 'beta_fine_coarse': float})))
    defaults = {k: v for k, v in base.to_dict().items() if k != 'couplings'}
    args = utils.get_args(config, defaultable=defaults)
    args['group_sizes'] = _numbers('group_sizes', args['group_sizes'], int)
    args['trader_rates'] = _numbers('trader_rates', args['trader_rates'], float)
    args['event_rates'] = _numbers('event_rates', args['event_rates'], float)
    return _check(SynthConfig(couplings=tuple(couplings),
                              calendar=calendar or SessionCalendar(), **args))


class _Trades(object):
    """Growing columns of trader index, session offset (ms) and volume of one day."""
    def __init__(self):
        self.traders: List[np.ndarray] = []
        self.offsets: List[np.ndarray] = []
        self.volumes: List[np.ndarray] = []

    def add(self, traders: np.ndarray, offsets: np.ndarray, volumes: np.ndarray):
        self.traders.append(traders.astype('int64'))
        self.offsets.append(offsets.astype('int64'))
        self.volumes.append(volumes.astype('float64'))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.traders:
            return (np.array([], dtype='int64'), np.array([], dtype='int64'),
                    np.array([], dtype='float64'))
        return (np.concatenate(self.traders), np.concatenate(self.offsets),
                np.concatenate(self.volumes))


def _business_days(cfg: SynthConfig) -> List[datetime.date]:
    days: List[datetime.date] = []
    first = cfg.start_day
    while len(days) < cfg.n_days:
        last = first + datetime.timedelta(days=2 * cfg.n_days + 14)
        days.extend(cfg.calendar.business_days_between(first, last))
        first = last + datetime.timedelta(days=1)
    return days[:cfg.n_days]


def _signs(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.where(rng.random(size) < 0.5, -1.0, 1.0)


def _slice_trades(counts: np.ndarray, traders: np.ndarray) \
        -> Tuple[np.ndarray, np.ndarray]:
    """Trader indices and slice positions of `counts[i, s]` trades of traders[i] in
    slice s."""
    rows, slots = np.nonzero(counts)
    n = counts[rows, slots]
    return np.repeat(traders[rows], n), np.repeat(slots, n)


def _simulate_day(cfg: SynthConfig, rng: np.random.Generator,
                  members: List[np.ndarray]) -> _Trades:
    slice_ms = cfg.slice_s * 1000
    n_slices = cfg.calendar.session_ms // slice_ms
    per_block = cfg.event_s // cfg.slice_s
    n_blocks = -(-n_slices // per_block)
    day = _Trades()

    # group events replace the members' baseline trading for a whole block
    counts = rng.poisson(cfg.baseline_rates()[:, None], size=(cfg.n_traders, n_slices))
    for group, rate in zip(members, cfg.group_event_rates()):
        active = rng.random(n_blocks) < rate
        direction = _signs(rng, n_blocks)
        in_event = np.repeat(active, per_block)[:n_slices]
        counts[np.ix_(group, np.flatnonzero(in_event))] = 0
        event_counts = rng.poisson(cfg.event_intensity, size=(group.size, n_slices))
        traders, slots = _slice_trades(event_counts * in_event, group)
        follow = rng.random(traders.size) < cfg.sync_prob
        signs = np.where(follow, direction[slots // per_block], _signs(rng, traders.size))
        offsets = slots * slice_ms + rng.integers(0, slice_ms, size=traders.size)
        volumes = signs * rng.lognormal(cfg.volume_mu, cfg.volume_sigma, traders.size)
        day.add(traders, offsets, volumes)

    traders, slots = _slice_trades(counts, np.arange(cfg.n_traders))
    offsets = slots * slice_ms + rng.integers(0, slice_ms, size=traders.size)
    volumes = _signs(rng, traders.size) * rng.lognormal(cfg.volume_mu, cfg.volume_sigma,
                                                        traders.size)
    day.add(traders, offsets, volumes)
    return day


def _apply_coupling(cfg: SynthConfig, rng: np.random.Generator, coupling: Coupling,
                    members: List[np.ndarray], traders: np.ndarray, offsets: np.ndarray,
                    volumes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Copy the source group's past direction into the target group's future interval.
    When a coupling fires, target member trades in the interval take the source's
    direction with probability sync_prob, and each member adds trades in proportion to
    the source's past trading rate.
    """
    source, target = members[coupling.source], members[coupling.target]
    tau1_ms, tau2_ms = coupling.tau1 * 1000, coupling.tau2 * 1000
    step = max(tau1_ms, tau2_ms)
    points = np.arange(1, (cfg.calendar.session_ms - tau2_ms) // step + 1) * step
    if points.size == 0:
        return traders, offsets, volumes
    in_source = np.isin(traders, source)
    src_offsets, src_volumes = offsets[in_source], volumes[in_source]
    k = src_offsets // step + 1
    inside = (src_offsets >= k * step - tau1_ms) & (k <= points.size)
    net = np.bincount(k[inside] - 1, weights=src_volumes[inside], minlength=points.size)
    n_past = np.bincount(k[inside] - 1, minlength=points.size)
    direction = np.sign(net)

    fire = (direction != 0) & (rng.random(points.size) < coupling.beta)
    fired = np.flatnonzero(fire)
    if fired.size == 0:
        return traders, offsets, volumes

    # trades of target members inside a fired future interval
    slot = offsets // step
    in_points = (slot >= 1) & (slot <= points.size)
    at = np.where(in_points, slot - 1, 0)
    hit = (np.isin(traders, target) & in_points & fire[at]
           & (offsets - slot * step < tau2_ms))
    follow = hit & (rng.random(volumes.size) < cfg.sync_prob)
    volumes = volumes.copy()
    volumes[follow] = direction[at[follow]] * np.abs(volumes[follow])

    mean = (cfg.coupling_gain * n_past[fired] * coupling.tau2
            / (coupling.tau1 * max(source.size, 1)))
    per_member = np.minimum(rng.poisson(np.repeat(mean, target.size)), _MAX_INJECTED)
    who = np.repeat(np.tile(target, fired.size), per_member)
    origin = np.repeat(np.repeat(fired, target.size), per_member)
    when = points[origin] + rng.integers(0, tau2_ms, size=who.size)
    signs = np.where(rng.random(who.size) < cfg.sync_prob, direction[origin],
                     _signs(rng, who.size))
    size = rng.lognormal(cfg.volume_mu, cfg.volume_sigma, who.size)
    return (np.concatenate([traders, who]), np.concatenate([offsets, when]),
            np.concatenate([volumes, signs * size]))


def generate_market(cfg: SynthConfig) -> TradeSet:
    """
    Draw a synthetic market: independent Poisson trading with random signs, group events
    covering whole blocks in which members trade the group's common sign with
    probability sync_prob, and couplings that copy a source group's past direction into
    a target group's future trades. Deterministic given the seed.
    """
    _check(cfg)
    rng = np.random.default_rng(cfg.seed)
    members = []
    start = 0
    for size in cfg.group_sizes:
        members.append(np.arange(start, start + size))
        start += size
    ids = np.asarray(cfg.trader_ids, dtype=object)

    frames = []
    for day in _business_days(cfg):
        traders, offsets, volumes = _simulate_day(cfg, rng, members).arrays()
        for coupling in cfg.couplings:
            traders, offsets, volumes = _apply_coupling(cfg, rng, coupling, members,
                                                        traders, offsets, volumes)
        day_start_ms = cfg.calendar.day_start(day).value // 1_000_000
        frames.append(pd.DataFrame({'trader_id': ids[traders],
                                    'timestamp_ms': day_start_ms + offsets,
                                    'volume': volumes}))
    frame = pd.concat(frames, ignore_index=True)
    log.info(f'Synthetic market: {len(frame)} trades, {cfg.n_traders} traders, '
             f'{cfg.n_days} days, seed {cfg.seed}')
    return filter_session(frame, cfg.calendar)


def generate_markets(cfg: SynthConfig, seeds: Iterable[int],
                     n_jobs: int = 1) -> List[TradeSet]:
    """One market per seed, generated in parallel."""
    configs = [replace(cfg, seed=seed) for seed in seeds]
    return Parallel(n_jobs=n_jobs)(delayed(generate_market)(c) for c in configs)


@dataclass(frozen=True)
class PlantedTruth:
    partition: GroupPartition
    couplings: Tuple[Coupling, ...]
    # planted group index -> members
    groups: Tuple[Tuple[str, ...], ...]

    def to_dict(self) -> Dict[str, Any]:
        return {'groups': [list(g) for g in self.groups],
                'couplings': [c._asdict() for c in self.couplings]}


def planted_truth(cfg: SynthConfig) -> PlantedTruth:
    """Planted partition (the same at every timescale) and couplings of a config."""
    groups = tuple(cfg.groups())
    return PlantedTruth(partition=GroupPartition.from_groups(groups),
                        couplings=tuple(cfg.couplings), groups=groups)


def export_truth(truth: PlantedTruth, path: str) -> None:
    store_api.write_json(truth.to_dict(), path)


def partition_ari(detected: GroupPartition, planted: GroupPartition,
                  universe: Sequence[str]) -> float:
    """Adjusted Rand index of two partitions over a trader universe; traders outside
    every group count as singletons."""
    def labels(partition: GroupPartition) -> List[int]:
        n = partition.n_groups
        return [partition.assignment.get(t, n + i) for i, t in enumerate(universe)]

    return float(adjusted_rand_score(labels(planted), labels(detected)))


def load_synth_config(config: Mapping[str, Any]) -> SynthConfig:
    """Synthetic market configuration from a whole configuration document."""
    return synth_config(config.get('synth', {}), build_calendar(config.get('session')))
