"""
Trader groups: two-level map equation community detection on the SVN, group summaries
and aggregate group states.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import (Any, Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional,
                    Sequence, Tuple, Union)

import networkx as nx
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from svnet import utils
from svnet.coarsen import StateMatrix, assign_states
from svnet.exceptions import InsufficientDataException, ValidationException
from svnet.metadata import ACTIVE, INACTIVE, StateAlphabet
from svnet.store import api as store_api
from svnet.store.tables import PartitionTable
from svnet.validate import SVN

log = logging.getLogger(utils.APP_NAME)

DEFAULT_RESTARTS = 10
# moves must improve the codelength by more than this many bits
_TOLERANCE = 1e-10
_MAX_SWEEPS = 200


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


def svn_graph(svn: SVN) -> nx.Graph:
    """Undirected graph of the SVN; the weight of an edge counts its validated links."""
    graph = nx.Graph()
    graph.add_weighted_edges_from(svn.edge_weights())
    return graph


def _modules_of(graph: nx.Graph,
                partition: Union[Mapping[Any, Any], Iterable[Iterable[Any]]]) \
        -> Dict[Any, Any]:
    if isinstance(partition, Mapping):
        modules = dict(partition)
    else:
        modules = {node: m for m, group in enumerate(partition) for node in group}
    missing = [n for n in graph.nodes if n not in modules]
    if missing:
        raise ValidationException(f'Partition does not cover nodes: {missing[:10]}')
    return modules


def map_codelength(graph: nx.Graph,
                   partition: Union[Mapping[Any, Any], Iterable[Iterable[Any]]]) -> float:
    """
    Two-level map equation of an undirected weighted graph.

    Visit rates are strength / total strength and the exit rate of a module is the
    weight of its boundary edges over the total strength.

    :param graph: graph with `weight` edge attributes (default 1)
    :param partition: node -> module mapping, or an iterable of node sets
    :return: codelength in bits
    :raises ValidationException: for a graph without edges or a partial partition
    """
    if graph.number_of_nodes() == 0 or graph.number_of_edges() == 0:
        raise ValidationException('Codelength of an empty graph is undefined')
    modules = _modules_of(graph, partition)
    strength = dict(graph.degree(weight='weight'))
    total = float(sum(strength.values()))
    exits: Dict[Any, float] = {}
    flows: Dict[Any, float] = {}
    for node, s in strength.items():
        flows[modules[node]] = flows.get(modules[node], 0.0) + s / total
    for u, v, w in graph.edges(data='weight', default=1):
        if modules[u] != modules[v]:
            exits[modules[u]] = exits.get(modules[u], 0.0) + w / total
            exits[modules[v]] = exits.get(modules[v], 0.0) + w / total
    return (_plogp(sum(exits.values()))
            - 2 * sum(_plogp(q) for q in exits.values())
            - sum(_plogp(s / total) for s in strength.values())
            + sum(_plogp(exits.get(m, 0.0) + p) for m, p in flows.items()))


class _Level(object):
    """
    Nodes of one aggregation level: their flow, the weight of their edges to other
    nodes and the adjacency between them. All weights are divided by total strength.
    """
    def __init__(self, flow: np.ndarray, outside: np.ndarray,
                 adjacency: List[Dict[int, float]]):
        self.flow = flow
        self.outside = outside
        self.adjacency = adjacency

    def __len__(self) -> int:
        return self.flow.shape[0]

    def aggregate(self, module: np.ndarray) -> Tuple['_Level', np.ndarray]:
        """Collapse modules into nodes; returns the new level and node -> new node."""
        _, renumbered = np.unique(module, return_inverse=True)
        n = int(renumbered.max()) + 1
        flow = np.bincount(renumbered, weights=self.flow, minlength=n)
        adjacency: List[Dict[int, float]] = [{} for _ in range(n)]
        for node, neighbours in enumerate(self.adjacency):
            a = renumbered[node]
            for other, w in neighbours.items():
                b = renumbered[other]
                if a != b:
                    adjacency[a][b] = adjacency[a].get(b, 0.0) + w
        outside = np.array([sum(nb.values()) for nb in adjacency], dtype='float64')
        return _Level(flow, outside, adjacency), renumbered


class _Search(object):
    """Greedy codelength minimization over one level, with module statistics."""

    def __init__(self, level: _Level, module: np.ndarray):
        self.level = level
        self.module = module.copy()
        size = len(level)
        self.exit = np.zeros(size)
        self.flow = np.bincount(self.module, weights=level.flow, minlength=size)
        for node, neighbours in enumerate(level.adjacency):
            m = self.module[node]
            self.exit[m] += sum(w for other, w in neighbours.items()
                                if self.module[other] != m)
        self.total_exit = float(self.exit.sum())

    def _delta(self, node: int, old: int, new: int, w_old: float, w_new: float) -> float:
        s, p = self.level.outside[node], self.level.flow[node]
        q_old, q_new = self.exit[old], self.exit[new]
        q_old2 = q_old - s + 2 * w_old
        q_new2 = q_new + s - 2 * w_new
        total2 = self.total_exit - q_old - q_new + q_old2 + q_new2
        return (_plogp(total2) - _plogp(self.total_exit)
                - 2 * (_plogp(q_old2) + _plogp(q_new2) - _plogp(q_old) - _plogp(q_new))
                + _plogp(q_old2 + self.flow[old] - p)
                + _plogp(q_new2 + self.flow[new] + p)
                - _plogp(q_old + self.flow[old]) - _plogp(q_new + self.flow[new]))

    def _move(self, node: int, old: int, new: int, w_old: float, w_new: float) -> None:
        s, p = self.level.outside[node], self.level.flow[node]
        q_old2 = self.exit[old] - s + 2 * w_old
        q_new2 = self.exit[new] + s - 2 * w_new
        self.total_exit += q_old2 + q_new2 - self.exit[old] - self.exit[new]
        self.exit[old], self.exit[new] = max(q_old2, 0.0), max(q_new2, 0.0)
        self.flow[old] -= p
        self.flow[new] += p
        self.module[node] = new

    def sweep(self, rng: np.random.Generator) -> int:
        """Move nodes in random order to the neighbouring module that lowers the
        codelength most; returns the number of moves."""
        moves = 0
        for node in rng.permutation(len(self.level)):
            old = self.module[node]
            links: Dict[int, float] = {}
            for other, w in self.level.adjacency[node].items():
                m = self.module[other]
                links[m] = links.get(m, 0.0) + w
            w_old = links.get(old, 0.0)
            best, best_delta = old, -_TOLERANCE
            for new in sorted(links):
                if new == old:
                    continue
                delta = self._delta(node, old, new, w_old, links[new])
                if delta < best_delta:
                    best, best_delta = new, delta
            if best != old:
                self._move(node, old, best, w_old, links[best])
                moves += 1
        return moves

    def converge(self, rng: np.random.Generator) -> bool:
        changed = False
        for _ in range(_MAX_SWEEPS):
            if not self.sweep(rng):
                break
            changed = True
        return changed


def _search_partition(base: _Level, seed: np.random.SeedSequence) -> np.ndarray:
    """One restart: node moves, then module merges on aggregated levels until nothing
    moves, then a final node-level refinement."""
    rng = np.random.default_rng(seed)
    # base node -> node of the current level
    assignment = np.arange(len(base))
    level = base
    while len(level) > 1:
        search = _Search(level, np.arange(len(level)))
        if not search.converge(rng):
            break
        level, mapping = level.aggregate(search.module)
        assignment = mapping[assignment]
    refine = _Search(base, assignment)
    refine.converge(rng)
    return refine.module


@dataclass(frozen=True)
class GroupPartition:
    """
    Disjoint trader groups of one window and timescale. Group ids are canonical: groups
    are sorted by their smallest trader id and numbered from 0.
    """
    groups: Tuple[FrozenSet[str], ...]
    window_id: int = 0
    delta_t: int = 0
    codelength: float = field(default=float('nan'), compare=False)
    assignment: Mapping[str, int] = field(default_factory=dict, compare=False)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]], window_id: int = 0,
                    delta_t: int = 0, codelength: float = float('nan')) \
            -> 'GroupPartition':
        canonical = sorted((frozenset(g) for g in groups if g), key=min)
        assignment: Dict[str, int] = {}
        for gid, group in enumerate(canonical):
            for trader in group:
                if trader in assignment:
                    raise ValidationException(f'Trader {trader} is in two groups')
                assignment[trader] = gid
        return cls(groups=tuple(canonical), window_id=window_id, delta_t=delta_t,
                   codelength=codelength, assignment=assignment)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def nodes(self) -> Tuple[str, ...]:
        return tuple(sorted(self.assignment))

    def members(self, group_id: int) -> Tuple[str, ...]:
        return tuple(sorted(self.groups[group_id]))

    def encoding(self) -> Tuple[Tuple[str, ...], ...]:
        return tuple(tuple(sorted(g)) for g in self.groups)

    def to_frame(self) -> pd.DataFrame:
        rows = [(self.window_id, self.delta_t, gid, trader)
                for gid in range(self.n_groups) for trader in self.members(gid)]
        return pd.DataFrame.from_records(rows, columns=list(PartitionTable.columns))


def detect_communities(svn: SVN, seed: int = 0, n_restarts: int = DEFAULT_RESTARTS,
                       n_jobs: int = 1) -> GroupPartition:
    """
    Find the partition of the SVN nodes with the smallest map equation codelength.

    Multilinks are collapsed into weighted edges. Each restart runs a seeded greedy
    search; the best codelength wins, ties going to the lexicographically smallest
    canonical partition.

    :param svn: validated network
    :param seed: base seed; restart seeds are spawned from it
    :param n_restarts: number of independent searches
    :param n_jobs: joblib workers for the restarts
    :return: partition; empty for an empty SVN
    """
    if len(svn) == 0:
        return GroupPartition.from_groups([], window_id=svn.window_id,
                                          delta_t=svn.delta_t)
    graph = svn_graph(svn)
    nodes = sorted(graph.nodes)
    index = {node: i for i, node in enumerate(nodes)}
    total = 2.0 * graph.size(weight='weight')
    adjacency: List[Dict[int, float]] = [
        {index[other]: w / total for other, w in
         ((o, d.get('weight', 1)) for o, d in graph[node].items())} for node in nodes]
    flow = np.array([sum(nb.values()) for nb in adjacency], dtype='float64')
    base = _Level(flow, flow.copy(), adjacency)

    seeds = np.random.SeedSequence(seed).spawn(max(1, n_restarts))
    results = Parallel(n_jobs=n_jobs)(delayed(_search_partition)(base, s) for s in seeds)

    candidates = []
    for assignment in results:
        groups: Dict[int, List[str]] = {}
        for node, m in zip(nodes, assignment):
            groups.setdefault(int(m), []).append(node)
        candidate = GroupPartition.from_groups(groups.values(), window_id=svn.window_id,
                                               delta_t=svn.delta_t)
        length = map_codelength(graph, candidate.assignment)
        candidates.append((round(length, 9), candidate.encoding(), length, candidate))
    _, _, length, best = min(candidates, key=lambda c: c[:2])
    partition = replace(best, codelength=length)
    log.debug(f'Window {svn.window_id}, dt={svn.delta_t}: {partition.n_groups} groups, '
              f'codelength {length:.6f} bits')
    return partition


class GroupSummary(NamedTuple):
    n_groups: int
    fraction_grouped: float
    mean_size: float
    median_size: float


def svn_summary(partition: GroupPartition, universe: int) -> GroupSummary:
    """
    Number of groups, fraction of the trader universe in a group, and mean and median
    group size (NaN without groups).
    """
    if universe <= 0:
        raise ValidationException(f'Trader universe must be positive, got {universe}')
    if partition.n_groups == 0:
        return GroupSummary(0, 0.0, float('nan'), float('nan'))
    sizes = np.array([len(g) for g in partition.groups], dtype='float64')
    return GroupSummary(partition.n_groups, float(sizes.sum()) / universe,
                        float(sizes.mean()), float(np.median(sizes)))


@dataclass(frozen=True, eq=False)
class GroupStateSeries:
    """Aggregate signed volume, turnover, imbalance, state and trade count of each group
    (rows, by group id) in each slot (columns)."""
    group_ids: Tuple[int, ...]
    net_volume: np.ndarray
    turnover: np.ndarray
    rho: np.ndarray
    states: np.ndarray
    n_trades: np.ndarray


def aggregate_states(net_volume: np.ndarray, turnover: np.ndarray, rho0: float,
                     alphabet: StateAlphabet = StateAlphabet.SIGNED) \
        -> Tuple[np.ndarray, np.ndarray]:
    """Imbalance ratio and state of aggregated volumes; NA where turnover is zero."""
    rho = np.full(net_volume.shape, np.nan)
    np.divide(net_volume, turnover, out=rho, where=turnover > 0)
    if alphabet is StateAlphabet.ACTIVITY:
        return rho, np.where(turnover > 0, ACTIVE, INACTIVE).astype('int8')
    return rho, assign_states(np.clip(rho, -1.0, 1.0), rho0)


def membership_matrix(partition: GroupPartition, traders: Sequence[str]) -> np.ndarray:
    """Groups x traders 0/1 matrix.

    :raises InsufficientDataException: if a group member is not among the traders
    """
    position = {t: i for i, t in enumerate(traders)}
    matrix = np.zeros((partition.n_groups, len(traders)), dtype='float64')
    for gid, group in enumerate(partition.groups):
        absent = sorted(t for t in group if t not in position)
        if absent:
            raise InsufficientDataException(f'Group {gid} members without data: '
                                            f'{", ".join(absent[:10])}')
        matrix[gid, [position[t] for t in group]] = 1.0
    return matrix


def group_state_series(partition: GroupPartition, sm: StateMatrix,
                       rho0: Optional[float] = None) -> GroupStateSeries:
    """
    Aggregate the members of every group slot by slot: V_g and A_g are sums over the
    members, the state follows the same thresholds as individual states.
    """
    members = membership_matrix(partition, sm.traders)
    v = members @ sm.net_volume
    a = members @ sm.turnover
    rho, states = aggregate_states(v, a, sm.rho0 if rho0 is None else rho0, sm.alphabet)
    counts = (members @ sm.n_trades.astype('float64')).astype('int64')
    return GroupStateSeries(group_ids=tuple(range(partition.n_groups)), net_volume=v,
                            turnover=a, rho=rho, states=states, n_trades=counts)


def export_partition(partition: GroupPartition, path: str) -> None:
    store_api.write_frame(PartitionTable, partition.to_frame(), path)


def read_partitions(path: str) -> Dict[Tuple[int, int], GroupPartition]:
    """Partitions of a partition table, keyed by (window_id, delta_t)."""
    frame = store_api.read_rows(PartitionTable, path)
    partitions = {}
    for (window_id, delta_t), rows in frame.groupby(['window_id', 'delta_t'], sort=True):
        groups = [set(g['trader_id']) for _, g in rows.groupby('group_id', sort=True)]
        partitions[(int(window_id), int(delta_t))] = GroupPartition.from_groups(
            groups, window_id=int(window_id), delta_t=int(delta_t))
    return partitions
