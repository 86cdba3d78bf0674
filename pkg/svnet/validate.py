"""
Statistical validation of pairwise state co-occurrences: exact hypergeometric
over-expression test and Benjamini-Hochberg false discovery rate control. The validated
pairs form a statistically validated network (SVN).
"""
import functools
import logging
from dataclasses import dataclass
from typing import Any, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp

from svnet import utils
from svnet.coarsen import StateMatrix
from svnet.exceptions import (ConfigException, InsufficientDataException,
                              ValidationException)
from svnet.metadata import StateEnum, StatePair, alphabet_states, grouping_pairs
from svnet.store import api as store_api
from svnet.store.tables import SvnLinkTable

log = logging.getLogger(utils.APP_NAME)

DEFAULT_ALPHA = 0.05
DEFAULT_MIN_ACTIVE_SLICES = 10
DEPENDENCE_MODES = ('independent', 'arbitrary')

# upper bound on the number of tail terms evaluated at once
_CHUNK_TERMS = 1 << 22
# tails below this underflow and are reported as this value
MIN_PVALUE = float(np.finfo('float64').tiny)


class CoTestResult(NamedTuple):
    T: int
    n_p: int
    n_q: int
    n_pq: int
    p_value: float


class SvnLink(NamedTuple):
    trader_i: str
    trader_j: str
    state_i: int
    state_j: int
    p_value: float


@dataclass(frozen=True)
class SVN:
    """
    Validated links between traders of one calibration window and timescale. There can
    be several links between two traders, one per validated state pair.
    """
    links: Tuple[SvnLink, ...]
    fdr_alpha: float
    window_id: int = 0
    delta_t: int = 0
    # traders that took part in testing
    universe: Tuple[str, ...] = ()
    n_tests: int = 0
    threshold: Optional[float] = None

    @property
    def nodes(self) -> Tuple[str, ...]:
        return tuple(sorted({t for link in self.links for t in link[:2]}))

    def __len__(self) -> int:
        return len(self.links)

    def edge_weights(self) -> List[Tuple[str, str, int]]:
        """Multilinks collapsed to (i, j, number of validated state pairs)."""
        weights: dict = {}
        for link in self.links:
            key = (link.trader_i, link.trader_j)
            weights[key] = weights.get(key, 0) + 1
        return [(i, j, w) for (i, j), w in sorted(weights.items())]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_records(self.links, columns=list(SvnLink._fields))
        frame.insert(0, 'window_id', self.window_id)
        return frame


def _as_states(series: Sequence[Any]) -> np.ndarray:
    if isinstance(series, np.ndarray) and series.dtype.kind in 'iu':
        return series
    return np.array([int(StateEnum.NA) if s is None else int(s) for s in series],
                    dtype='int16')


def cooccurrence_counts(series_a: Sequence[Any], series_b: Sequence[Any],
                        pair: StatePair) -> Tuple[int, int, int, int]:
    """
    Count the slots of two aligned state series.

    :param series_a: states of the first trader; None or NA never match a state
    :param series_b: states of the second trader
    :param pair: (P, Q)
    :return: (T, N_P, N_Q, N_PQ)
    :raises ValidationException: for series of different length
    """
    a, b = _as_states(series_a), _as_states(series_b)
    if a.shape != b.shape:
        raise ValidationException(f'State series lengths differ: {a.shape[0]} and '
                                  f'{b.shape[0]}')
    p, q = pair
    in_p, in_q = a == p, b == q
    return (int(a.shape[0]), int(in_p.sum()), int(in_q.sum()),
            int((in_p & in_q).sum()))


@functools.lru_cache(maxsize=16)
def _log_factorials(n: int) -> np.ndarray:
    table = gammaln(np.arange(n + 1, dtype='float64') + 1.0)
    table.setflags(write=False)
    return table


def _check_counts(T: np.ndarray, n_p: np.ndarray, n_q: np.ndarray,
                  n_pq: np.ndarray) -> None:
    bad = ((T < 0) | (n_p < 0) | (n_q < 0) | (n_pq < 0) | (n_p > T) | (n_q > T)
           | (n_pq > np.minimum(n_p, n_q)) | (n_pq < n_p + n_q - T))
    if bad.any():
        i = np.flatnonzero(bad.ravel())[0]
        raise ValidationException(
            'Inconsistent co-occurrence counts: T={}, N_P={}, N_Q={}, N_PQ={}'.format(
                T.ravel()[i], n_p.ravel()[i], n_q.ravel()[i], n_pq.ravel()[i]))


def hypergeom_pvalues(T: Any, n_p: Any, n_q: Any, n_pq: Any) -> np.ndarray:
    """
    Upper tail P(X >= N_PQ) of the hypergeometric distribution of the number of
    co-occurrences, for arrays of tests. Terms are log-pmfs from a shared log-factorial
    table, summed with logsumexp.

    :raises ValidationException: if any test violates the count invariants
    """
    arrays = np.broadcast_arrays(*(np.asarray(x, dtype='int64')
                                   for x in (T, n_p, n_q, n_pq)))
    shape = arrays[0].shape
    T, n_p, n_q, n_pq = (x.ravel() for x in arrays)
    _check_counts(T, n_p, n_q, n_pq)
    # the tail is symmetric in the margins; ordering them makes it bitwise symmetric too
    n_p, n_q = np.minimum(n_p, n_q), np.maximum(n_p, n_q)
    out = np.ones(T.shape[0], dtype='float64')

    # at or below the smallest feasible count the tail holds all the mass
    todo = np.flatnonzero(n_pq > np.maximum(0, n_p + n_q - T))
    if todo.size == 0:
        return out.reshape(shape)

    lf = _log_factorials(int(T[todo].max()))
    hi = np.minimum(n_p, n_q)
    widths = hi - n_pq + 1
    order = todo[np.argsort(widths[todo], kind='stable')]
    start = 0
    while start < order.size:
        end = min(order.size, start + max(1, _CHUNK_TERMS // int(widths[order[start]])))
        while end > start + 1 and widths[order[end - 1]] * (end - start) > _CHUNK_TERMS:
            end = start + (end - start) // 2
        idx = order[start:end]
        width = int(widths[idx].max())
        t, p, q, lo, top = (x[idx, None] for x in (T, n_p, n_q, n_pq, hi))
        x = lo + np.arange(width)[None, :]
        valid = x <= top
        x = np.minimum(x, top)
        log_terms = (lf[p] - lf[x] - lf[p - x] + lf[t - p] - lf[q - x]
                     - lf[t - p - q + x] - lf[t] + lf[q] + lf[t - q])
        log_terms = np.where(valid, log_terms, -np.inf)
        out[idx] = np.clip(np.exp(logsumexp(log_terms, axis=1)), MIN_PVALUE, 1.0)
        start = end
    return out.reshape(shape)


def hypergeom_pvalue(T: int, n_p: int, n_q: int, n_pq: int) -> float:
    """
    Probability of at least N_PQ co-occurrences in T slots when N_P and N_Q states are
    placed independently at random.

    :return: p-value in (0, 1]
    :raises ValidationException: if the counts are inconsistent
    """
    return float(hypergeom_pvalues(T, n_p, n_q, n_pq))


def co_test(series_a: Sequence[Any], series_b: Sequence[Any],
            pair: StatePair) -> CoTestResult:
    counts = cooccurrence_counts(series_a, series_b, pair)
    return CoTestResult(*counts, p_value=hypergeom_pvalue(*counts))


class BHResult(NamedTuple):
    # None when nothing is rejected
    threshold: Optional[float]
    rejected: np.ndarray


def bh_threshold(pvalues: Iterable[float], alpha: float, m: Optional[int] = None,
                 dependence: str = 'independent') -> BHResult:
    """
    Benjamini-Hochberg step-up procedure.

    :param pvalues: p-values of the tests performed
    :param alpha: false discovery rate
    :param m: total number of tests, at least len(pvalues); defaults to len(pvalues)
    :param dependence: 'independent' (BH) or 'arbitrary' (Benjamini-Yekutieli, alpha
    divided by the harmonic number of m)
    :return: threshold p_(k) of the largest k with p_(k) <= k * alpha / m and the
    rejection mask p <= p_(k)
    """
    p = np.asarray(list(pvalues) if not isinstance(pvalues, np.ndarray) else pvalues,
                   dtype='float64')
    if not 0 < alpha < 1:
        raise ConfigException(f'FDR alpha must lie in (0, 1), got {alpha}')
    if dependence not in DEPENDENCE_MODES:
        raise ConfigException(f'Unknown FDR dependence mode: {dependence}')
    m = p.shape[0] if m is None else m
    if m < p.shape[0]:
        raise ValidationException(f'Test count m = {m} is smaller than the number of '
                                  f'p-values ({p.shape[0]})')
    rejected = np.zeros(p.shape[0], dtype=bool)
    if p.shape[0] == 0:
        return BHResult(None, rejected)
    if dependence == 'arbitrary':
        alpha = alpha / float(np.sum(1.0 / np.arange(1, m + 1)))
    ordered = np.sort(p)
    below = ordered <= np.arange(1, p.shape[0] + 1) * alpha / m
    if not below.any():
        return BHResult(None, rejected)
    k = int(np.flatnonzero(below)[-1])
    threshold = float(ordered[k])
    return BHResult(threshold, p <= threshold)


def _closed_pairs(pairs: Iterable[StatePair]) -> List[StatePair]:
    """State pairs tested for i < j: each pair in both orientations."""
    closed = set()
    for p, q in pairs:
        closed.add((int(p), int(q)))
        closed.add((int(q), int(p)))
    return sorted(closed, key=lambda pq: (-pq[0], -pq[1]))


def build_svn(sm: StateMatrix, pairs: Optional[Iterable[StatePair]] = None,
              alpha: float = DEFAULT_ALPHA,
              min_active_slices: int = DEFAULT_MIN_ACTIVE_SLICES,
              condition_on_joint_activity: bool = False, window_id: int = 0,
              dependence: str = 'independent') -> SVN:
    """
    Test every unordered pair of sufficiently active traders for every state pair and
    keep the links that survive FDR control.

    :param sm: state matrix of the window
    :param pairs: state pairs; defaults to the grouping pairs of the matrix's alphabet
    :param alpha: false discovery rate
    :param min_active_slices: traders with fewer active slices are not tested
    :param condition_on_joint_activity: count only slots where both traders are active
    :param window_id: calibration window id recorded in the SVN
    :param dependence: FDR dependence mode, see bh_threshold
    :return: SVN with links sorted by (trader_i, trader_j, state_i, state_j)
    :raises InsufficientDataException: if the matrix holds fewer than two traders
    """
    if sm.n_traders < 2:
        raise InsufficientDataException(
            f'Window {window_id}: at least two traders are needed, got {sm.n_traders}')
    pairs = list(grouping_pairs(sm.alphabet) if pairs is None else pairs)
    states = set(alphabet_states(sm.alphabet))
    for pair in pairs:
        if not set(pair) <= states:
            raise ConfigException(f'State pair {pair} is not in the {sm.alphabet.value} '
                                  f'alphabet')

    eligible = np.flatnonzero(sm.active_slices() >= min_active_slices)
    excluded = sm.n_traders - eligible.shape[0]
    if excluded:
        log.info(f'Window {window_id}, dt={sm.grid.delta_t}: {excluded} traders below '
                 f'{min_active_slices} active slices not tested')
    traders = tuple(sm.traders[i] for i in eligible)
    base = dict(fdr_alpha=alpha, window_id=window_id, delta_t=sm.grid.delta_t,
                universe=traders)
    if len(traders) < 2:
        log.warning(f'Window {window_id}, dt={sm.grid.delta_t}: fewer than two traders '
                    f'to test')
        return SVN(links=(), **base)

    grid = sm.states[eligible]
    active = sm.active[eligible].astype('float64')
    iu, ju = np.triu_indices(len(traders), k=1)
    blocks = []
    for p, q in _closed_pairs(pairs):
        x_p = (grid == p).astype('float64')
        x_q = (grid == q).astype('float64')
        n_pq = (x_p @ x_q.T)[iu, ju]
        if condition_on_joint_activity:
            t = (active @ active.T)[iu, ju]
            n_p = (x_p @ active.T)[iu, ju]
            n_q = (active @ x_q.T)[iu, ju]
        else:
            t = np.full(iu.shape[0], float(grid.shape[1]))
            n_p = x_p.sum(axis=1)[iu]
            n_q = x_q.sum(axis=1)[ju]
        tested = (n_p > 0) & (n_q > 0)
        blocks.append((p, q, iu[tested], ju[tested],
                       *(np.rint(v[tested]).astype('int64')
                         for v in (t, n_p, n_q, n_pq))))

    pvalues = [hypergeom_pvalues(b[4], b[5], b[6], b[7]) for b in blocks]
    all_p = np.concatenate(pvalues) if pvalues else np.array([])
    bh = bh_threshold(all_p, alpha, m=all_p.shape[0], dependence=dependence)

    links: List[SvnLink] = []
    offset = 0
    for (p, q, ii, jj, *_), pv in zip(blocks, pvalues):
        hits = np.flatnonzero(bh.rejected[offset:offset + pv.shape[0]])
        offset += pv.shape[0]
        links.extend(SvnLink(traders[ii[h]], traders[jj[h]], p, q, float(pv[h]))
                     for h in hits)
    links.sort()
    log.debug(f'Window {window_id}, dt={sm.grid.delta_t}: {all_p.shape[0]} tests, '
              f'{len(links)} validated links')
    return SVN(links=tuple(links), n_tests=int(all_p.shape[0]), threshold=bh.threshold,
               **base)


def export_svn(svn: SVN, path: str) -> None:
    store_api.write_frame(SvnLinkTable, svn.to_frame(), path)
