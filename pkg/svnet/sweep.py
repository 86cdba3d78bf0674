"""
Rolling calibration windows and the timescale pair grid: grouping networks per
(window, timescale) and lead-lag networks per (window, ordered timescale pair).
"""
import functools
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Memory, Parallel, delayed

from svnet import utils
from svnet.coarsen import DEFAULT_RHO0, slice_grid, state_matrix
from svnet.community import (DEFAULT_RESTARTS, GroupPartition, detect_communities,
                             svn_summary)
from svnet.exceptions import (ConfigException, IncompleteSweepException,
                              InsufficientDataException, SweepTaskException)
from svnet.ingest import TradeSet
from svnet.leadlag import (LeadLagNetwork, alignment_grid, build_llsvn, classify_links,
                           leadlag_observations)
from svnet.metadata import StateAlphabet, get_alphabet
from svnet.stats import TSTAT_METHODS, activity_rate_correlation
from svnet.store import api as store_api
from svnet.store.tables import (GroupSummaryTable, LeadLagLinkTable, PartitionTable,
                                SweepCellTable)
from svnet.validate import DEPENDENCE_MODES, build_svn
from svnet.version import get_version

log = logging.getLogger(utils.APP_NAME)

MANIFEST = 'manifest.json'


@dataclass(frozen=True)
class SweepConfig:
    t_in_days: Tuple[int, ...] = (30,)
    window_step_days: int = 5
    grid_min_s: int = 300
    grid_max_s: int = 14400
    grid_step_s: int = 300
    rho0: float = DEFAULT_RHO0
    fdr_alpha: float = 0.05
    seed: int = 0
    threads: int = 1
    # windows whose trade subsets are held in memory at once
    cache_windows: int = 4
    min_active_slices: int = 10
    n_restarts: int = DEFAULT_RESTARTS
    condition_on_joint_activity: bool = False
    pool_state_pairs: bool = True
    pool_observations: bool = False
    tstat_method: str = 'ar1'
    n_min: int = 10
    fdr_dependence: str = 'independent'
    state_alphabet: StateAlphabet = StateAlphabet.SIGNED
    cache_dir: Optional[str] = None
    keep_links: bool = False

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['t_in_days'] = list(self.t_in_days)
        values['state_alphabet'] = self.state_alphabet.value
        return values

    def hashed(self) -> Dict[str, Any]:
        """Settings that determine results; worker count and caching do not."""
        values = self.to_dict()
        del values['threads'], values['cache_dir'], values['cache_windows']
        return values


def sweep_config(config: Optional[Mapping[str, Any]] = None) -> SweepConfig:
    """
    Build a sweep configuration from the `[sweep]` section of a configuration mapping.

    :raises ConfigException: for a missing, mistyped or out of range value
    """
    config = dict(config or {})
    base = SweepConfig()
    t_in = config.pop('t_in_days', list(base.t_in_days))
    t_in = [t_in] if isinstance(t_in, int) and not isinstance(t_in, bool) else t_in
    if (not isinstance(t_in, (list, tuple)) or not t_in
            or not all(isinstance(t, int) and not isinstance(t, bool) for t in t_in)):
        raise ConfigException(f't_in_days must be an integer or a list of integers, got '
                              f'{t_in!r}')
    defaults = base.to_dict()
    del defaults['t_in_days'], defaults['cache_dir']
    unknown = sorted(set(config) - set(defaults) - {'cache_dir'})
    if unknown:
        log.warning(f'Ignoring unknown sweep settings: {", ".join(unknown)}')
    args = utils.get_args(config, defaultable=defaults, optional={'cache_dir': str})

    cfg = SweepConfig(t_in_days=tuple(t_in),
                      state_alphabet=get_alphabet(args.pop('state_alphabet')),
                      cache_dir=args.pop('cache_dir', None), **args)
    if any(t < 1 for t in cfg.t_in_days):
        raise ConfigException('t_in_days must be positive')
    if cfg.window_step_days < 1:
        raise ConfigException('window_step_days must be at least 1')
    if not 0 < cfg.rho0 < 1:
        raise ConfigException(f'rho0 must lie in (0, 1), got {cfg.rho0}')
    if not 0 < cfg.fdr_alpha < 1:
        raise ConfigException(f'fdr_alpha must lie in (0, 1), got {cfg.fdr_alpha}')
    if cfg.threads == 0 or cfg.threads < -1:
        raise ConfigException('threads must be positive or -1 (all cores)')
    if cfg.cache_windows < 1:
        raise ConfigException('cache_windows must be at least 1')
    if cfg.n_restarts < 1 or cfg.min_active_slices < 0 or cfg.n_min < 2:
        raise ConfigException('n_restarts must be >= 1, min_active_slices >= 0 and '
                              'n_min >= 2')
    if cfg.tstat_method not in TSTAT_METHODS:
        raise ConfigException(f'Unknown tstat_method: {cfg.tstat_method}')
    if cfg.fdr_dependence not in DEPENDENCE_MODES:
        raise ConfigException(f'Unknown fdr_dependence: {cfg.fdr_dependence}')
    timescale_grid(cfg.grid_min_s, cfg.grid_max_s, cfg.grid_step_s)
    return cfg


class CalibrationWindow(NamedTuple):
    index: int
    # position of the first business day in the trade set
    start: int
    length: int

    @property
    def days(self) -> range:
        return range(self.start, self.start + self.length)


def rolling_windows(n_days: int, t_in_days: int, step_days: int) \
        -> List[CalibrationWindow]:
    """
    Windows of t_in_days business days starting every step_days days, fully inside a
    span of n_days days.

    :raises ConfigException: if the span is shorter than a window or step < 1
    """
    if step_days < 1 or t_in_days < 1:
        raise ConfigException('Window length and step must be at least one day')
    if n_days < t_in_days:
        raise ConfigException(f'Data span of {n_days} business days is shorter than the '
                              f'{t_in_days}-day calibration window')
    starts = range(0, n_days - t_in_days + 1, step_days)
    return [CalibrationWindow(i, start, t_in_days) for i, start in enumerate(starts)]


@dataclass(frozen=True)
class TimescaleGrid:
    min_s: int
    max_s: int
    step_s: int
    values: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'values',
                           tuple(range(self.min_s, self.max_s + 1, self.step_s)))

    @property
    def unordered_pairs(self) -> List[Tuple[int, int]]:
        return [(a, b) for i, a in enumerate(self.values) for b in self.values[i:]]

    @property
    def ordered_pairs(self) -> List[Tuple[int, int]]:
        return list(product(self.values, self.values))


def timescale_grid(min_s: int = 300, max_s: int = 14400, step_s: int = 300) \
        -> TimescaleGrid:
    """
    :raises ConfigException: unless 0 < min <= max, step > 0 and step divides max - min
    """
    if min_s <= 0 or step_s <= 0 or min_s > max_s:
        raise ConfigException(f'Invalid timescale grid {min_s}..{max_s} step {step_s}')
    if (max_s - min_s) % step_s:
        raise ConfigException(f'Step {step_s} does not divide {max_s} - {min_s}')
    return TimescaleGrid(min_s, max_s, step_s)


def task_seed(seed: int, window: int, delta_t: int) -> int:
    return int(np.random.SeedSequence([seed, window, delta_t]).generate_state(1)[0])


class GroupingCell(NamedTuple):
    partition: GroupPartition
    summary: Tuple[Any, ...]


def grouping_task(ts: TradeSet, window: CalibrationWindow, delta_t: int,
                  cfg: SweepConfig) -> GroupingCell:
    """States, SVN, partition and summary of one (window, timescale)."""
    try:
        grid = slice_grid(ts.calendar, delta_t, window.days)
        sm = state_matrix(ts, grid, cfg.rho0, cfg.state_alphabet)
        svn = build_svn(sm, alpha=cfg.fdr_alpha, min_active_slices=cfg.min_active_slices,
                        condition_on_joint_activity=cfg.condition_on_joint_activity,
                        window_id=window.index, dependence=cfg.fdr_dependence)
        partition = detect_communities(svn, seed=task_seed(cfg.seed, window.index,
                                                           delta_t),
                                       n_restarts=cfg.n_restarts)
        summary = svn_summary(partition, sm.n_traders)
    except Exception as ex:
        raise SweepTaskException(f'Window {window.index}, dt={delta_t}: {ex}') from ex
    row = (window.index, delta_t, sm.n_traders, len(svn), *summary,
           partition.codelength)
    return GroupingCell(partition, row)


class LeadLagCell(NamedTuple):
    row: Tuple[Any, ...]
    links: Optional[pd.DataFrame]


def leadlag_task(ts: TradeSet, window: CalibrationWindow, dt1: int, dt2: int,
                 partition1: GroupPartition, partition2: GroupPartition,
                 cfg: SweepConfig) -> LeadLagCell:
    """Lead-lag network, link taxonomy and activity correlation of one (window, dt1,
    dt2)."""
    try:
        grid = alignment_grid(ts.calendar, dt1, dt2, window.days)
        obs = leadlag_observations(ts, partition1, partition2, grid, rho0=cfg.rho0,
                                   alphabet=cfg.state_alphabet, window_id=window.index)
        if partition1.n_groups and partition2.n_groups and grid.n_points:
            net = build_llsvn(obs, alpha=cfg.fdr_alpha,
                              pool_state_pairs=cfg.pool_state_pairs,
                              dependence=cfg.fdr_dependence)
        else:
            net = LeadLagNetwork(links=(), fdr_alpha=cfg.fdr_alpha, delta_t1=dt1,
                                 delta_t2=dt2, n_groups1=partition1.n_groups,
                                 n_groups2=partition2.n_groups,
                                 shared_groups=obs.shared_groups, window_id=window.index,
                                 n_points=grid.n_points)
        taxonomy = classify_links(net)
        rho_n = activity_rate_correlation(obs, net.linked_pairs(),
                                          pool=cfg.pool_observations)
    except Exception as ex:
        raise SweepTaskException(f'Window {window.index}, pair ({dt1}, {dt2}): '
                                 f'{ex}') from ex
    row = (window.index, dt1, dt2, grid.n_points, taxonomy.n_links, taxonomy.n_self,
           taxonomy.n_cross, taxonomy.n_only_self_groups, taxonomy.n_dual, rho_n)
    return LeadLagCell(row, net.to_frame() if cfg.keep_links else None)


@dataclass(frozen=True, eq=False)
class SweepResult:
    config: SweepConfig
    t_in_days: int
    windows: Tuple[CalibrationWindow, ...]
    grid: TimescaleGrid
    partitions: Dict[Tuple[int, int], GroupPartition]
    summaries: pd.DataFrame
    cells: pd.DataFrame
    links: Optional[pd.DataFrame] = None
    days: Tuple[str, ...] = ()

    @property
    def window_ids(self) -> Tuple[int, ...]:
        return tuple(w.index for w in self.windows)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return utils.config_hash(self.config.hashed())

    def cell(self, window_id: int, dt1: int, dt2: int) -> pd.Series:
        rows = self.cells[(self.cells['window_id'] == window_id)
                          & (self.cells['dt1'] == dt1) & (self.cells['dt2'] == dt2)]
        if len(rows) != 1:
            raise KeyError((window_id, dt1, dt2))
        return rows.iloc[0]


def _frame(table, rows) -> pd.DataFrame:
    frame = pd.DataFrame.from_records(list(rows), columns=list(table.columns))
    return frame.astype(table.dtypes)


def run_sweep(ts: TradeSet, cfg: SweepConfig, t_in_days: Optional[int] = None) \
        -> SweepResult:
    """
    Run the grouping and lead-lag pipeline over every window and timescale pair.

    Partitions are computed once per (window, timescale) and shared by every pair that
    contains the timescale. Work units run through joblib; results are reduced in key
    order, so the output does not depend on the number of workers.
    Windows are processed in batches of cache_windows; only the trade subsets of the
    current batch are held in memory.

    :param ts: session-filtered trades
    :param cfg: sweep configuration
    :param t_in_days: window length; the first configured length by default
    :raises InsufficientDataException: for an empty trade set
    :raises SweepTaskException: naming the window and timescales of a failed unit
    """
    if len(ts) == 0:
        raise InsufficientDataException('No trades to sweep')
    t_in = cfg.t_in_days[0] if t_in_days is None else t_in_days
    windows = rolling_windows(ts.n_days, t_in, cfg.window_step_days)
    grid = timescale_grid(cfg.grid_min_s, cfg.grid_max_s, cfg.grid_step_s)
    # fail fast on timescales longer than the session
    for dt in grid.values:
        slice_grid(ts.calendar, dt, range(0))
    started = time.time()
    log.info(f'Sweep: {len(windows)} windows of {t_in} days, {len(grid.values)} '
             f'timescales, {len(grid.ordered_pairs)} ordered pairs, '
             f'{cfg.threads} workers')

    grouping = grouping_task
    if cfg.cache_dir:
        grouping = Memory(cfg.cache_dir, verbose=0).cache(grouping_task)

    @functools.lru_cache(maxsize=cfg.cache_windows)
    def window_trades(index: int) -> TradeSet:
        return ts.select_days(windows[index].days)

    partitions: Dict[Tuple[int, int], GroupPartition] = {}
    grouped: List[GroupingCell] = []
    leadlag: List[LeadLagCell] = []
    with Parallel(n_jobs=cfg.threads) as parallel:
        for first in range(0, len(windows), cfg.cache_windows):
            batch = windows[first:first + cfg.cache_windows]
            cells = parallel(delayed(grouping)(window_trades(w.index), w, dt, cfg)
                             for w in batch for dt in grid.values)
            for (w, dt), cell in zip(product(batch, grid.values), cells):
                partitions[(w.index, dt)] = cell.partition
            grouped.extend(cells)
            leadlag.extend(parallel(
                delayed(leadlag_task)(window_trades(w.index), w, dt1, dt2,
                                      partitions[(w.index, dt1)],
                                      partitions[(w.index, dt2)], cfg)
                for w in batch for dt1, dt2 in grid.ordered_pairs))
            log.info(f'Sweep: {first + len(batch)} of {len(windows)} windows done in '
                     f'{time.time() - started:.1f} s')
    window_trades.cache_clear()

    links = None
    if cfg.keep_links:
        frames = [c.links for c in leadlag if c.links is not None and len(c.links)]
        links = (pd.concat(frames, ignore_index=True).astype(LeadLagLinkTable.dtypes)
                 if frames else _frame(LeadLagLinkTable, []))
    return SweepResult(config=cfg, t_in_days=t_in, windows=tuple(windows), grid=grid,
                       partitions=partitions,
                       summaries=_frame(GroupSummaryTable, (c.summary for c in grouped)),
                       cells=_frame(SweepCellTable, (c.row for c in leadlag)),
                       links=links, days=tuple(d.isoformat() for d in ts.days))


def _window_dir(out_dir: str, window_id: int) -> str:
    return os.path.join(out_dir, f'window_{window_id:04d}')


def _partition_frame(result: SweepResult, window_id: int) -> pd.DataFrame:
    frames = [result.partitions[(window_id, dt)].to_frame() for dt in result.grid.values]
    return pd.concat(frames, ignore_index=True) if frames else _frame(PartitionTable, [])


def save_sweep(result: SweepResult, out_dir: str,
               extra: Optional[Mapping[str, Any]] = None) -> str:
    """
    Write a sweep as one directory of CSV shards per window and a JSON manifest, which
    is written last.

    :return: path of the manifest
    """
    shards = []
    for w in result.windows:
        directory = _window_dir(out_dir, w.index)
        tables = [('cells.csv', SweepCellTable,
                   result.cells[result.cells['window_id'] == w.index]),
                  ('summaries.csv', GroupSummaryTable,
                   result.summaries[result.summaries['window_id'] == w.index]),
                  ('partitions.csv', PartitionTable, _partition_frame(result, w.index))]
        if result.links is not None:
            tables.append(('links.csv', LeadLagLinkTable,
                           result.links[result.links['window_id'] == w.index]))
        for name, table, frame in tables:
            store_api.write_frame(table, frame, os.path.join(directory, name))
            shards.append(os.path.relpath(os.path.join(directory, name), out_dir))
    manifest = {
        'version': get_version(),
        'config': result.config.to_dict(),
        'config_hash': result.config_hash,
        'seed': result.seed,
        't_in_days': result.t_in_days,
        'windows': [{'index': w.index, 'start': w.start, 'length': w.length,
                     'first_day': result.days[w.start] if result.days else None,
                     'last_day': result.days[w.start + w.length - 1]
                     if result.days else None}
                    for w in result.windows],
        'days': list(result.days),
        'timescales': list(result.grid.values),
        'n_cells': len(result.windows) * len(result.grid.ordered_pairs),
        'shards': sorted(shards),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, MANIFEST)
    store_api.write_json(manifest, path)
    log.info(f'Sweep written to {out_dir} ({len(shards)} shards)')
    return path


def load_sweep(sweep_dir: str) -> SweepResult:
    """
    Read a sweep directory back and check that every (window, ordered pair) cell is
    present exactly once.

    :raises IncompleteSweepException: listing missing shards or cells
    """
    path = os.path.join(sweep_dir, MANIFEST)
    if not os.path.exists(path):
        raise IncompleteSweepException(f'{sweep_dir} holds no sweep manifest')
    manifest = store_api.read_json(path)
    config = dict(manifest['config'])
    cfg = sweep_config(config)
    windows = tuple(CalibrationWindow(w['index'], w['start'], w['length'])
                    for w in manifest['windows'])
    grid = timescale_grid(cfg.grid_min_s, cfg.grid_max_s, cfg.grid_step_s)

    missing = [s for s in manifest['shards']
               if not os.path.exists(os.path.join(sweep_dir, s))]
    if missing:
        raise IncompleteSweepException(f'Sweep {sweep_dir} is missing shards', missing)

    def read(name, table) -> pd.DataFrame:
        frames = [store_api.read_rows(table, os.path.join(_window_dir(sweep_dir, w.index),
                                                          name)) for w in windows]
        return (pd.concat(frames, ignore_index=True).astype(table.dtypes) if frames
                else _frame(table, []))

    cells = read('cells.csv', SweepCellTable)
    expected = {(w.index, dt1, dt2) for w in windows for dt1, dt2 in grid.ordered_pairs}
    found = list(zip(cells['window_id'], cells['dt1'], cells['dt2']))
    absent = sorted(expected - set(found))
    duplicated = len(found) != len(set(found))
    if absent or duplicated:
        raise IncompleteSweepException(
            f'Sweep {sweep_dir} has missing or duplicated cells',
            [f'window={w} dt1={a} dt2={b}' for w, a, b in absent] or ['duplicates'])

    partitions = {}
    for (w_id, dt), rows in read('partitions.csv', PartitionTable).groupby(
            ['window_id', 'delta_t'], sort=True):
        groups = [set(g['trader_id']) for _, g in rows.groupby('group_id', sort=True)]
        partitions[(int(w_id), int(dt))] = GroupPartition.from_groups(
            groups, window_id=int(w_id), delta_t=int(dt))
    summaries = read('summaries.csv', GroupSummaryTable)
    for row in summaries.itertuples(index=False):
        key = (int(row.window_id), int(row.delta_t))
        partition = partitions.get(key) or GroupPartition.from_groups(
            [], window_id=key[0], delta_t=key[1])
        partitions[key] = GroupPartition.from_groups(
            partition.groups, window_id=key[0], delta_t=key[1],
            codelength=float(row.codelength))
    links = read('links.csv', LeadLagLinkTable) if cfg.keep_links else None
    return SweepResult(config=cfg, t_in_days=int(manifest['t_in_days']), windows=windows,
                       grid=grid, partitions=partitions, summaries=summaries,
                       cells=cells, links=links, days=tuple(manifest.get('days', ())))


def sweep_dirs(out_dir: str, t_in_days: Sequence[int]) -> List[Tuple[int, str]]:
    """Output directory of each window length: out_dir itself for a single length,
    tin_<T>/ below it for several."""
    if len(t_in_days) == 1:
        return [(t_in_days[0], out_dir)]
    return [(t, os.path.join(out_dir, f'tin_{t}')) for t in t_in_days]
