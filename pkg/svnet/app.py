# -*- coding: utf-8 -*-
"""svnet command line handlers

Every subcommand reads its inputs, runs one stage of the pipeline and writes its outputs
together with a run manifest: the effective configuration, its hash, the seed, the tool
version, digests of the input files and the timing of the run.
"""
import argparse
import datetime
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from svnet import utils
from svnet.coarsen import export_states, slice_grid, state_matrix
from svnet.community import GroupPartition, export_partition, read_partitions
from svnet.exceptions import (ConfigException, DataException, IncompleteSweepException,
                              InsufficientDataException, UsageException)
from svnet.ingest import (TradeFormat, TradeSet, build_calendar, filter_session,
                          parse_trade_frame, write_trades)
from svnet.leadlag import (alignment_grid, build_llsvn, classify_links, export_llsvn,
                           leadlag_observations)
from svnet.metadata import default_config_path
from svnet.stats import asymmetry_report, export_mugshot
from svnet.store import api as store_api
from svnet.store.tables import GroupSummaryTable, ReportTable
from svnet.sweep import (CalibrationWindow, SweepConfig, grouping_task, load_sweep,
                         run_sweep, save_sweep, sweep_config, sweep_dirs)
from svnet.synth import export_truth, generate_market, load_synth_config, planted_truth
from svnet.validate import build_svn, export_svn
from svnet.version import get_version

log = logging.getLogger(utils.APP_NAME)

RUN_MANIFEST = 'run.json'

# command line flag -> key of the [sweep] section
_SWEEP_FLAGS = {
    'seed': 'seed',
    'threads': 'threads',
    'rho0': 'rho0',
    'alpha': 'fdr_alpha',
    'alphabet': 'state_alphabet',
    't_in': 't_in_days',
    'n_min': 'n_min',
    'method': 'tstat_method',
}


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    config_hash: str
    seed: Optional[int]
    version: str = field(default_factory=get_version)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    started: str = ''
    elapsed_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def manifest_path(out: str) -> str:
    """Run manifest of an output: run.json inside an output directory, <out>.manifest.json
    next to an output file."""
    if os.path.isdir(out):
        return os.path.join(out, RUN_MANIFEST)
    return out + '.manifest.json'


def load_config(path: Optional[str] = None,
                defaults: str = 'defaults.toml') -> Dict[str, Any]:
    """
    Effective configuration: packaged defaults, overridden by the config file, overridden
    by SVNET_THREADS. Command line flags are applied on top by the handlers.
    """
    config = utils.load_toml(default_config_path(defaults))
    if path:
        config = utils.merge_config(config, utils.load_toml(path))
    threads = utils.env_threads()
    if threads is not None:
        config = utils.merge_config(config, {'sweep': {'threads': threads}})
    return config


def apply_flags(config: Mapping[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    """Overlay the sweep flags given on the command line."""
    values = {key: getattr(args, flag) for flag, key in _SWEEP_FLAGS.items()
              if getattr(args, flag, None) is not None}
    return utils.merge_config(config, {'sweep': values}) if values else dict(config)


def _trade_format(config: Mapping[str, Any]) -> TradeFormat:
    return TradeFormat(**utils.get_args(config, defaultable=TradeFormat()._asdict()))


def load_trades(path: str, config: Mapping[str, Any]) -> TradeSet:
    """
    Parse a trade file and keep the trades inside the configured session.

    :raises InsufficientDataException: if no trade falls inside the session
    """
    cal = build_calendar(config.get('session'))
    frame = parse_trade_frame(path, _trade_format(config.get('input', {})))
    ts = filter_session(frame, cal)
    if len(ts) == 0:
        raise InsufficientDataException(f'None of the {len(frame)} trades in {path} '
                                        f'falls inside the session')
    log.info(f'{len(ts)} of {len(frame)} trades inside the session: '
             f'{len(ts.traders)} traders, {ts.n_days} business days')
    return ts


def select_window(ts: TradeSet, start: int = 0,
                  days: Optional[int] = None) -> CalibrationWindow:
    """Window of `days` business days (all remaining by default) from day position
    `start`."""
    length = ts.n_days - start if days is None else days
    if start < 0 or length < 1 or start + length > ts.n_days:
        raise ConfigException(f'Window of {length} days from day {start} does not fit '
                              f'the {ts.n_days} business days of the data')
    return CalibrationWindow(0, start, length)


def _snapshot(config: Mapping[str, Any], cfg: Optional[SweepConfig] = None,
              **params: Any) -> Dict[str, Any]:
    snapshot: Dict[str, Any] = {'session': dict(config.get('session', {})),
                                'input': dict(config.get('input', {}))}
    if cfg is not None:
        snapshot['sweep'] = cfg.hashed()
    snapshot.update({k: v for k, v in params.items() if v is not None})
    return snapshot


def write_run_manifest(command: str, snapshot: Dict[str, Any], seed: Optional[int],
                       inputs: List[str], outputs: List[str], started: float) -> str:
    manifest = RunManifest(
        command=command, config=snapshot, config_hash=utils.config_hash(snapshot),
        seed=seed, inputs={p: utils.file_digest(p) for p in inputs}, outputs=outputs,
        started=datetime.datetime.fromtimestamp(
            started, datetime.timezone.utc).isoformat(timespec='seconds'),
        elapsed_s=round(time.time() - started, 3))
    path = manifest_path(outputs[0])
    store_api.write_json(manifest.to_dict(), path)
    return path


def synth(args: argparse.Namespace, started: float) -> None:
    config = load_config(args.config, defaults='synth.toml')
    if args.seed is not None:
        config = utils.merge_config(config, {'synth': {'seed': args.seed}})
    cfg = load_synth_config(config)
    ts = generate_market(cfg)
    write_trades(ts, args.out)
    outputs = [args.out]
    if args.truth:
        export_truth(planted_truth(cfg), args.truth)
        outputs.append(args.truth)
    snapshot = {'session': dict(config.get('session', {})), 'synth': cfg.to_dict()}
    write_run_manifest('synth', snapshot, cfg.seed, [], outputs, started)


def states(args: argparse.Namespace, started: float) -> None:
    config = apply_flags(load_config(args.config), args)
    cfg = sweep_config(config.get('sweep'))
    ts = load_trades(args.input, config)
    window = select_window(ts, args.start, args.days)
    grid = slice_grid(ts.calendar, args.delta_t, window.days)
    sm = state_matrix(ts, grid, cfg.rho0, cfg.state_alphabet)
    export_states(sm, args.out)
    log.info(f'States of {sm.n_traders} traders in {grid.n_slices} slices')
    write_run_manifest('states', _snapshot(config, cfg, delta_t=args.delta_t,
                                           window=list(window)),
                       None, [args.input], [args.out], started)


def svn(args: argparse.Namespace, started: float) -> None:
    config = apply_flags(load_config(args.config), args)
    cfg = sweep_config(config.get('sweep'))
    ts = load_trades(args.input, config)
    window = select_window(ts, args.start, args.days)
    sm = state_matrix(ts, slice_grid(ts.calendar, args.delta_t, window.days), cfg.rho0,
                      cfg.state_alphabet)
    network = build_svn(sm, alpha=cfg.fdr_alpha, min_active_slices=cfg.min_active_slices,
                        condition_on_joint_activity=cfg.condition_on_joint_activity,
                        window_id=window.index, dependence=cfg.fdr_dependence)
    export_svn(network, args.out)
    log.info(f'{len(network)} validated links between {len(network.nodes)} traders')
    write_run_manifest('svn', _snapshot(config, cfg, delta_t=args.delta_t,
                                        window=list(window)),
                       None, [args.input], [args.out], started)


def groups(args: argparse.Namespace, started: float) -> None:
    config = apply_flags(load_config(args.config), args)
    cfg = sweep_config(config.get('sweep'))
    ts = load_trades(args.input, config)
    window = select_window(ts, args.start, args.days)
    cell = grouping_task(ts, window, args.delta_t, cfg)
    export_partition(cell.partition, args.out)
    outputs = [args.out]
    if args.summary:
        store_api.write_rows(GroupSummaryTable, [cell.summary], args.summary)
        outputs.append(args.summary)
    log.info(f'{cell.partition.n_groups} groups at dt={args.delta_t}')
    write_run_manifest('groups', _snapshot(config, cfg, delta_t=args.delta_t,
                                           window=list(window)),
                       cfg.seed, [args.input], outputs, started)


def _partition_for(partitions: Mapping[Tuple[int, int], GroupPartition],
                   delta_t: int) -> GroupPartition:
    matches = [p for (_, dt), p in sorted(partitions.items()) if dt == delta_t]
    if len(matches) != 1:
        raise DataException(f'Expected one partition at dt={delta_t}, found '
                            f'{len(matches)}')
    return matches[0]


def leadlag(args: argparse.Namespace, started: float) -> None:
    config = apply_flags(load_config(args.config), args)
    cfg = sweep_config(config.get('sweep'))
    ts = load_trades(args.input, config)
    window = select_window(ts, args.start, args.days)
    inputs = [args.input]
    if args.partitions:
        found = read_partitions(args.partitions)
        partition1 = _partition_for(found, args.dt1)
        partition2 = _partition_for(found, args.dt2)
        inputs.append(args.partitions)
    else:
        partition1 = grouping_task(ts, window, args.dt1, cfg).partition
        partition2 = (partition1 if args.dt2 == args.dt1
                      else grouping_task(ts, window, args.dt2, cfg).partition)
    grid = alignment_grid(ts.calendar, args.dt1, args.dt2, window.days)
    obs = leadlag_observations(ts, partition1, partition2, grid, rho0=cfg.rho0,
                               alphabet=cfg.state_alphabet, window_id=window.index)
    network = build_llsvn(obs, alpha=cfg.fdr_alpha, pool_state_pairs=cfg.pool_state_pairs,
                          dependence=cfg.fdr_dependence)
    export_llsvn(network, args.out)
    taxonomy = classify_links(network)
    log.info(f'{taxonomy.n_links} lead-lag links ({taxonomy.n_dual} dual) over '
             f'{grid.n_points} alignment points')
    write_run_manifest('leadlag', _snapshot(config, cfg, dt1=args.dt1, dt2=args.dt2,
                                            window=list(window)),
                       cfg.seed, inputs, [args.out], started)


def sweep(args: argparse.Namespace, started: float) -> None:
    config = apply_flags(load_config(args.config), args)
    cfg = sweep_config(config.get('sweep'))
    ts = load_trades(args.input, config)
    os.makedirs(args.out, exist_ok=True)
    digests = {args.input: utils.file_digest(args.input)}
    for t_in, out_dir in sweep_dirs(args.out, cfg.t_in_days):
        result = run_sweep(ts, cfg, t_in)
        save_sweep(result, out_dir, extra={'inputs': digests,
                                           'session': _snapshot(config)['session']})
    write_run_manifest('sweep', _snapshot(config, cfg), cfg.seed, [args.input],
                       [args.out], started)


def asym(args: argparse.Namespace, started: float) -> None:
    result = load_sweep(args.sweep)
    flags = apply_flags({'sweep': result.config.to_dict()}, args)['sweep']
    cfg = sweep_config(flags)
    report = asymmetry_report(result, n_min=cfg.n_min, method=cfg.tstat_method,
                              alpha=cfg.fdr_alpha, dependence=cfg.fdr_dependence)
    export_mugshot(report, args.metric, args.out)
    snapshot = {'sweep': cfg.hashed(), 'metric': args.metric,
                'sweep_hash': result.config_hash}
    write_run_manifest('asym', snapshot, result.seed,
                       [os.path.join(args.sweep, 'manifest.json')], [args.out], started)


def _mean(values: pd.Series) -> float:
    data = values.to_numpy(dtype='float64', na_value=np.nan)
    data = data[np.isfinite(data)]
    return float(data.mean()) if data.shape[0] else float('nan')


def emit_report(sweep_dir: str, path: str) -> pd.DataFrame:
    """
    Per timescale averages over the calibration windows of a completed sweep: group
    counts and sizes, grouped fraction, and the links of the diagonal lead-lag networks
    (dt1 = dt2) split into self, cross and dual links.

    :raises IncompleteSweepException: if the sweep is missing cells or holds no windows
    """
    result = load_sweep(sweep_dir)
    if not result.windows:
        raise IncompleteSweepException(f'Sweep {sweep_dir} holds no calibration windows')
    cells = result.cells[result.cells['dt1'] == result.cells['dt2']]
    rows = []
    for dt in result.grid.values:
        s = result.summaries[result.summaries['delta_t'] == dt]
        c = cells[cells['dt1'] == dt]
        rows.append((dt, len(result.windows), _mean(s['n_groups']),
                     _mean(s['fraction_grouped']), _mean(s['mean_size']),
                     _mean(s['median_size']), _mean(c['n_links']), _mean(c['n_self']),
                     _mean(c['n_cross']), _mean(c['n_only_self_groups']),
                     _mean(c['n_dual'])))
    frame = pd.DataFrame.from_records(rows, columns=list(ReportTable.columns))
    store_api.write_frame(ReportTable, frame, path)
    log.info(f'Report of {len(rows)} timescales written to {path}')
    return frame


def report(args: argparse.Namespace, started: float) -> None:
    result_manifest = os.path.join(args.sweep, 'manifest.json')
    emit_report(args.sweep, args.out)
    write_run_manifest('report', {'sweep': args.sweep}, None, [result_manifest],
                       [args.out], started)


COMMANDS: Dict[str, Callable[[argparse.Namespace, float], None]] = {
    'synth': synth,
    'states': states,
    'svn': svn,
    'groups': groups,
    'leadlag': leadlag,
    'sweep': sweep,
    'asym': asym,
    'report': report,
}


def run_command(name: str, args: argparse.Namespace) -> int:
    """
    Run one subcommand and convert its failure into an exit status.

    :return: 0 on success, 2 usage/config error, 3 data error, 4 internal error
    """
    utils.set_command(name)
    started = time.time()
    try:
        if name not in COMMANDS:
            raise UsageException(f'Unknown command: {name}')
        COMMANDS[name](args, started)
        log.info(f'Done in {time.time() - started:.1f} s')
        return utils.EXIT_OK
    except Exception as ex:
        return utils.handle_exception(ex)
    finally:
        utils.set_command('')
