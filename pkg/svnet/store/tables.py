"""
Module containing the layouts of all CSV tables that are read or written by the package.
"""
from typing import Any, Dict, Tuple


class Table(object):
    """
    CSV table layout: file columns in order and the dtype of each column when read back.
    """
    name = ''
    columns: Tuple[str, ...] = ()
    dtypes: Dict[str, Any] = {}

    @classmethod
    def header(cls) -> str:
        return ','.join(cls.columns)


class TradeTable(Table):
    """
    Raw trade records. Positive volume is a buy, negative a sell.
    """
    name = 'trades'
    columns = ('trader_id', 'timestamp_ms', 'volume')
    dtypes = {'trader_id': str, 'timestamp_ms': 'int64', 'volume': 'float64'}


class StateTable(Table):
    """
    Per trader and slice states, for debugging.
    """
    name = 'states'
    columns = ('trader_id', 'day', 'slice', 'state', 'v', 'a', 'n_trades')
    dtypes = {'trader_id': str, 'day': str, 'slice': 'int64', 'state': str,
              'v': 'float64', 'a': 'float64', 'n_trades': 'int64'}


class SvnLinkTable(Table):
    name = 'svn_links'
    columns = ('window_id', 'trader_i', 'trader_j', 'state_i', 'state_j', 'p_value')
    dtypes = {'window_id': 'int64', 'trader_i': str, 'trader_j': str,
              'state_i': 'int64', 'state_j': 'int64', 'p_value': 'float64'}


class PartitionTable(Table):
    name = 'partitions'
    columns = ('window_id', 'delta_t', 'group_id', 'trader_id')
    dtypes = {'window_id': 'int64', 'delta_t': 'int64', 'group_id': 'int64',
              'trader_id': str}


class LeadLagLinkTable(Table):
    name = 'leadlag_links'
    columns = ('window_id', 'dt1', 'dt2', 'src_group', 'src_state', 'dst_group',
               'dst_state', 'p_value')
    dtypes = {'window_id': 'int64', 'dt1': 'int64', 'dt2': 'int64',
              'src_group': 'int64', 'src_state': 'int64', 'dst_group': 'int64',
              'dst_state': 'int64', 'p_value': 'float64'}


class SweepCellTable(Table):
    """
    One row per calibration window and ordered timescale pair. Self/cross counts are
    empty when leading and lagging groups differ.
    """
    name = 'cells'
    columns = ('window_id', 'dt1', 'dt2', 'n_alignment', 'n_links', 'n_self', 'n_cross',
               'n_only_self_groups', 'n_dual', 'rho_n')
    dtypes = {'window_id': 'int64', 'dt1': 'int64', 'dt2': 'int64',
              'n_alignment': 'int64', 'n_links': 'int64', 'n_self': 'Int64',
              'n_cross': 'Int64', 'n_only_self_groups': 'Int64', 'n_dual': 'int64',
              'rho_n': 'float64'}


class GroupSummaryTable(Table):
    name = 'summaries'
    columns = ('window_id', 'delta_t', 'n_traders', 'n_svn_links', 'n_groups',
               'fraction_grouped', 'mean_size', 'median_size', 'codelength')
    dtypes = {'window_id': 'int64', 'delta_t': 'int64', 'n_traders': 'int64',
              'n_svn_links': 'int64', 'n_groups': 'int64',
              'fraction_grouped': 'float64', 'mean_size': 'float64',
              'median_size': 'float64', 'codelength': 'float64'}


class MugshotTable(Table):
    name = 'mugshot'
    columns = ('dt1', 'dt2', 'mean', 'tstat', 'fdr_pass')
    dtypes = {'dt1': 'int64', 'dt2': 'int64', 'mean': 'float64', 'tstat': 'float64',
              'fdr_pass': 'boolean'}


class ReportTable(Table):
    """
    Diagonal (dt1 = dt2) averages over calibration windows.
    """
    name = 'report'
    columns = ('delta_t', 'n_windows', 'n_groups', 'fraction_grouped', 'mean_size',
               'median_size', 'n_links', 'n_self', 'n_cross', 'n_only_self_groups',
               'n_dual')
    dtypes = {'delta_t': 'int64', 'n_windows': 'int64', 'n_groups': 'float64',
              'fraction_grouped': 'float64', 'mean_size': 'float64',
              'median_size': 'float64', 'n_links': 'float64', 'n_self': 'float64',
              'n_cross': 'float64', 'n_only_self_groups': 'float64',
              'n_dual': 'float64'}
