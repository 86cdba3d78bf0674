"""
Timescale asymmetry statistics over a sweep: link count differences, activity rate
correlations, autocorrelation-robust t-statistics, FDR masks and mugshot files.
"""
import logging
import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats as sp_stats

from svnet import utils
from svnet.exceptions import ConfigException
from svnet.leadlag import LeadLagObservations
from svnet.store import api as store_api
from svnet.store.tables import MugshotTable
from svnet.validate import DEFAULT_ALPHA, bh_threshold

if TYPE_CHECKING:
    from svnet.sweep import SweepResult  # noqa

log = logging.getLogger(utils.APP_NAME)

DEFAULT_N_MIN = 10
TSTAT_METHODS = ('ar1', 'hac')
# below this effective sample size p-values come from the t distribution
NORMAL_N_EFF = 30

# metric name -> (sweep cell column, difference statistic)
METRICS: Dict[str, Tuple[str, bool]] = {
    'links': ('n_links', True),
    'rho_n': ('rho_n', True),
    'links_mean': ('n_links', False),
    'rho_n_mean': ('rho_n', False),
}


def pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Pearson correlation; None with fewer than 3 points or a constant side."""
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.shape[0] < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def activity_rate_correlation(obs: LeadLagObservations,
                              pairs: Iterable[Tuple[int, int]],
                              pool: bool = False) -> float:
    """
    Correlation between the trading rates N1/dt1 of leading groups in past intervals
    and N2/dt2 of lagging groups in future intervals.

    :param obs: lead-lag observations of the window
    :param pairs: (leading group, lagging group) pairs joined by a validated link
    :param pool: one correlation over the observations of all pairs instead of the mean
    of per-pair correlations
    :return: correlation, NaN when no pair qualifies
    """
    past, future = obs.past_rates(), obs.future_rates()
    pairs = list(pairs)
    if pool:
        if not pairs:
            return float('nan')
        x = np.concatenate([past[g1] for g1, _ in pairs])
        y = np.concatenate([future[g2] for _, g2 in pairs])
        r = pearson(x, y)
        return float('nan') if r is None else r
    values = [r for r in (pearson(past[g1], future[g2]) for g1, g2 in pairs)
              if r is not None]
    return float(np.mean(values)) if values else float('nan')


def metric_cube(cells: pd.DataFrame, column: str, values: Sequence[int],
                window_ids: Sequence[int]) -> np.ndarray:
    """Windows x dt1 x dt2 array of a sweep cell column; NaN where a cell is NA."""
    position = {v: i for i, v in enumerate(values)}
    windows = {w: i for i, w in enumerate(window_ids)}
    cube = np.full((len(window_ids), len(values), len(values)), np.nan)
    if len(cells):
        w = cells['window_id'].map(windows).to_numpy(dtype='int64')
        i = cells['dt1'].map(position).to_numpy(dtype='int64')
        j = cells['dt2'].map(position).to_numpy(dtype='int64')
        cube[w, i, j] = cells[column].to_numpy(dtype='float64', na_value=np.nan)
    return cube


class LinkCounts(NamedTuple):
    values: Tuple[int, ...]
    # windows x dt1 x dt2
    counts: np.ndarray
    # counts(dt1, dt2) - counts(dt2, dt1)
    differences: np.ndarray
    mean: np.ndarray


def link_count_matrix(sweep: 'SweepResult') -> LinkCounts:
    values = tuple(sweep.grid.values)
    counts = metric_cube(sweep.cells, 'n_links', values, sweep.window_ids)
    differences = counts - np.transpose(counts, (0, 2, 1))
    mean = np.nanmean(counts, axis=0) if counts.shape[0] else \
        np.full((len(values), len(values)), np.nan)
    return LinkCounts(values, counts, differences, mean)


class TStat(NamedTuple):
    t: float
    n: int
    n_eff: float
    # 'ok', 'zero_variance' or 'insufficient'
    flag: str


def _lag1_autocorrelation(d: np.ndarray) -> float:
    centered = d - d.mean()
    denominator = float(np.dot(centered, centered))
    return float(np.dot(centered[:-1], centered[1:])) / denominator


def robust_tstat(d: Iterable[float], n_min: int = DEFAULT_N_MIN,
                 method: str = 'ar1') -> TStat:
    """
    One-sample t-statistic of the mean of a serially correlated series.

    With method 'ar1' the sample size is replaced by N (1 - r1) / (1 + r1), clipped to
    [1, N], r1 being the lag-1 autocorrelation. With 'hac' the standard error is the
    Newey-West estimate with the usual automatic bandwidth.

    :param d: series; NaN values are dropped
    :param n_min: minimal number of finite values
    :param method: 'ar1' or 'hac'
    """
    if method not in TSTAT_METHODS:
        raise ConfigException(f'Unknown t-statistic method: {method}')
    d = np.asarray(list(d), dtype='float64')
    d = d[np.isfinite(d)]
    n = int(d.shape[0])
    if n < n_min:
        return TStat(float('nan'), n, float('nan'), 'insufficient')
    if np.ptp(d) == 0:
        return TStat(float('nan'), n, float('nan'), 'zero_variance')

    if method == 'hac':
        lags = int(math.floor(4 * (n / 100.0) ** (2.0 / 9.0)))
        fit = sm.OLS(d, np.ones((n, 1))).fit(cov_type='HAC', cov_kwds={'maxlags': lags})
        return TStat(float(fit.tvalues[0]), n, float(n), 'ok')

    r1 = _lag1_autocorrelation(d)
    n_eff = float(n) if r1 <= -1 else n * (1 - r1) / (1 + r1)
    n_eff = min(max(n_eff, 1.0), float(n))
    t = float(d.mean()) / (float(d.std(ddof=1)) / math.sqrt(n_eff))
    return TStat(t, n, n_eff, 'ok')


def tstat_pvalue(t: float, n_eff: float) -> float:
    """Two-sided p-value: normal tail for large effective samples, Student-t below."""
    if n_eff >= NORMAL_N_EFF:
        return float(2 * sp_stats.norm.sf(abs(t)))
    return float(2 * sp_stats.t.sf(abs(t), df=max(n_eff - 1, 1.0)))


def fdr_mask_grid(tstats: np.ndarray, n_eff: Optional[np.ndarray] = None,
                  alpha: float = DEFAULT_ALPHA,
                  dependence: str = 'independent') -> np.ndarray:
    """
    FDR mask of a grid of antisymmetric t-statistics. The family is the unordered
    off-diagonal pairs with a finite t-statistic; the mask is symmetric and False on
    the diagonal and on NA cells.
    """
    tstats = np.asarray(tstats, dtype='float64')
    n_eff = np.full(tstats.shape, np.inf) if n_eff is None else np.asarray(n_eff)
    iu, ju = np.triu_indices(tstats.shape[0], k=1)
    valid = np.isfinite(tstats[iu, ju])
    iu, ju = iu[valid], ju[valid]
    pvalues = np.array([tstat_pvalue(tstats[i, j], n_eff[i, j]) for i, j in zip(iu, ju)])
    mask = np.zeros(tstats.shape, dtype=bool)
    rejected = bh_threshold(pvalues, alpha, dependence=dependence).rejected
    mask[iu[rejected], ju[rejected]] = True
    return mask | mask.T


@dataclass(frozen=True, eq=False)
class MetricStats:
    """
    Long-format mugshot of one metric. Difference metrics have one row per unordered
    pair, oriented dt1 >= dt2; mean metrics have one row per ordered pair.
    """
    metric: str
    values: Tuple[int, ...]
    rows: pd.DataFrame

    def matrix(self, column: str = 'mean') -> np.ndarray:
        """Square matrix indexed by (dt1, dt2); difference metrics are filled in
        antisymmetrically."""
        position = {v: i for i, v in enumerate(self.values)}
        out = np.full((len(self.values), len(self.values)), np.nan)
        data = self.rows[column].to_numpy(dtype='float64', na_value=np.nan)
        for dt1, dt2, value in zip(self.rows['dt1'], self.rows['dt2'], data):
            i, j = position[int(dt1)], position[int(dt2)]
            out[i, j] = value
            if METRICS[self.metric][1] and i != j:
                out[j, i] = -value
        return out

    def to_frame(self) -> pd.DataFrame:
        return self.rows.loc[:, list(MugshotTable.columns)].reset_index(drop=True)


@dataclass(frozen=True, eq=False)
class AsymmetryReport:
    values: Tuple[int, ...]
    n_windows: int
    metrics: Dict[str, MetricStats]
    alpha: float = DEFAULT_ALPHA
    method: str = 'ar1'
    n_min: int = DEFAULT_N_MIN
    config_hash: str = ''
    seed: int = 0

    def __getitem__(self, metric: str) -> MetricStats:
        if metric not in self.metrics:
            raise ConfigException(f'Unknown metric {metric!r}; choose one of '
                                  f'{", ".join(sorted(self.metrics))}')
        return self.metrics[metric]


def _difference_rows(cube: np.ndarray, values: Sequence[int], n_min: int, method: str,
                     alpha: float, dependence: str) -> pd.DataFrame:
    n = len(values)
    tstats = np.full((n, n), np.nan)
    n_eff = np.full((n, n), np.nan)
    means = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i + 1):
            d = cube[:, i, j] - cube[:, j, i]
            finite = d[np.isfinite(d)]
            means[i, j] = finite.mean() if finite.shape[0] else np.nan
            if i == j:
                continue
            result = robust_tstat(d, n_min=n_min, method=method)
            tstats[i, j], tstats[j, i] = result.t, -result.t
            n_eff[i, j] = n_eff[j, i] = result.n_eff
    mask = fdr_mask_grid(tstats, n_eff, alpha=alpha, dependence=dependence)
    rows = []
    for i in range(n):
        for j in range(i + 1):
            tested = i != j and np.isfinite(tstats[i, j])
            rows.append((values[i], values[j], means[i, j], tstats[i, j],
                         bool(mask[i, j]) if tested else pd.NA))
    return _mugshot_frame(rows)


def _mean_rows(cube: np.ndarray, values: Sequence[int]) -> pd.DataFrame:
    rows = []
    for i, dt1 in enumerate(values):
        for j, dt2 in enumerate(values):
            column = cube[:, i, j]
            column = column[np.isfinite(column)]
            rows.append((dt1, dt2, column.mean() if column.shape[0] else np.nan,
                         np.nan, pd.NA))
    return _mugshot_frame(rows)


def _mugshot_frame(rows) -> pd.DataFrame:
    frame = pd.DataFrame.from_records(rows, columns=list(MugshotTable.columns))
    return frame.astype({'dt1': 'int64', 'dt2': 'int64', 'mean': 'float64',
                         'tstat': 'float64', 'fdr_pass': 'boolean'})


def asymmetry_report(sweep: 'SweepResult', n_min: int = DEFAULT_N_MIN,
                     method: str = 'ar1', alpha: float = DEFAULT_ALPHA,
                     dependence: str = 'independent') -> AsymmetryReport:
    """
    Difference statistics (links, rho_n) and means (links_mean, rho_n_mean) of a sweep.

    :param sweep: complete sweep result
    :param n_min: minimal number of windows for a t-statistic
    :param method: t-statistic method, 'ar1' or 'hac'
    :param alpha: FDR of the grid masks
    :param dependence: FDR dependence mode
    """
    values = tuple(sweep.grid.values)
    metrics = {}
    for name, (column, difference) in METRICS.items():
        cube = metric_cube(sweep.cells, column, values, sweep.window_ids)
        rows = (_difference_rows(cube, values, n_min, method, alpha, dependence)
                if difference else _mean_rows(cube, values))
        metrics[name] = MetricStats(metric=name, values=values, rows=rows)
    log.info(f'Asymmetry statistics over {len(sweep.window_ids)} windows and '
             f'{len(values)} timescales')
    return AsymmetryReport(values=values, n_windows=len(sweep.window_ids),
                           metrics=metrics, alpha=alpha, method=method, n_min=n_min,
                           config_hash=sweep.config_hash, seed=sweep.seed)


def mugshot_manifest_path(path: str) -> str:
    return os.path.splitext(path)[0] + '.json'


def export_mugshot(report: AsymmetryReport, metric: str, path: str) -> None:
    """
    Write one metric as CSV rows dt1,dt2,mean,tstat,fdr_pass, and a JSON manifest next
    to it.
    """
    stats = report[metric]
    store_api.write_frame(MugshotTable, stats.to_frame(), path)
    store_api.write_json({
        'metric': metric,
        'values': list(report.values),
        'n_windows': report.n_windows,
        'n_rows': len(stats.rows),
        'alpha': report.alpha,
        'tstat_method': report.method,
        'n_min': report.n_min,
        'config_hash': report.config_hash,
        'seed': report.seed,
    }, mugshot_manifest_path(path))


def read_mugshot(path: str, metric: Optional[str] = None) -> MetricStats:
    """
    Read a mugshot CSV. The metric name and timescales come from the manifest next to it
    when present.
    """
    rows = store_api.read_rows(MugshotTable, path)
    manifest_path = mugshot_manifest_path(path)
    values: Tuple[int, ...] = tuple(sorted(set(rows['dt1']) | set(rows['dt2'])))
    if os.path.exists(manifest_path):
        manifest = store_api.read_json(manifest_path)
        metric = metric or manifest.get('metric')
        values = tuple(int(v) for v in manifest.get('values', values))
    if metric not in METRICS:
        raise ConfigException(f'Unknown metric {metric!r}')
    return MetricStats(metric=metric, values=values, rows=rows)
