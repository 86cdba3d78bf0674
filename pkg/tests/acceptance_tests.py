"""
Statistical acceptance checks of the exact test and of the pipeline on synthetic
markets. These take minutes to tens of minutes and only run with SVNET_SLOW_TESTS=1.
"""
import math
import os
import time
import unittest
from dataclasses import replace
from unittest import TestCase

import numpy as np
import pandas as pd

from svnet import ingest, leadlag, stats, sweep, synth, validate
from svnet.coarsen import slice_grid, state_matrix
from svnet.validate import build_svn

SLOW = os.environ.get('SVNET_SLOW_TESTS') == '1'
ALPHA = 0.05
# upper bound for a false discovery proportion averaged over 20 seeds
FDR_BOUND = ALPHA + 2 * math.sqrt(ALPHA * (1 - ALPHA) / 20)

INDEPENDENT = synth.SynthConfig(n_traders=50, group_sizes=(), n_days=30)
PLANTED = synth.SynthConfig(n_traders=50, group_sizes=(5, 5), n_days=30)


def partitions_at(ts, cfg, *deltas):
    window = sweep.CalibrationWindow(0, 0, ts.n_days)
    return [sweep.grouping_task(ts, window, dt, cfg).partition for dt in deltas]


def leadlag_network(ts, dt1, dt2, p1, p2):
    grid = leadlag.alignment_grid(ts.calendar, dt1, dt2, range(ts.n_days))
    return leadlag.build_llsvn(leadlag.leadlag_observations(ts, p1, p2, grid))


def permutation_tail(rng: np.random.Generator, T: int, n_p: int, n_q: int, n_pq: int,
                     shuffles: int, batch: int = 20000) -> float:
    """Share of random placements of n_q states among T slots hitting at least n_pq of
    the first n_p slots."""
    placed = np.zeros(T, dtype=bool)
    placed[:n_q] = True
    hits = 0
    for start in range(0, shuffles, batch):
        rows = min(batch, shuffles - start)
        shuffled = rng.permuted(np.tile(placed, (rows, 1)), axis=1)
        hits += int((shuffled[:, :n_p].sum(axis=1) >= n_pq).sum())
    return hits / shuffles


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class ExactTestOracleTestCase(TestCase):
    def test_permutation_oracle(self):
        rng = np.random.default_rng(11)
        shuffles = 100000
        misses = []
        for _ in range(200):
            T = int(rng.integers(1, 51))
            n_p, n_q = int(rng.integers(0, T + 1)), int(rng.integers(0, T + 1))
            lo, hi = max(0, n_p + n_q - T), min(n_p, n_q)
            n_pq = int(rng.integers(lo, hi + 1))
            p = validate.hypergeom_pvalue(T, n_p, n_q, n_pq)
            estimate = permutation_tail(rng, T, n_p, n_q, n_pq, shuffles)
            # floored at the resolution of a single hit
            se = math.sqrt(max(p * (1 - p), 1 / shuffles) / shuffles)
            if abs(estimate - p) > 3 * se:
                misses.append((T, n_p, n_q, n_pq, p, estimate))
        # about 0.5 misses expected beyond 3 standard errors among 200 instances
        self.assertLessEqual(len(misses), 3, misses)


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class FalseDiscoveryTestCase(TestCase):
    def test_grouping_links(self):
        proportions = []
        for seed in range(20):
            ts = synth.generate_market(replace(INDEPENDENT, seed=seed))
            sm = state_matrix(ts, slice_grid(ts.calendar, 300, range(ts.n_days)))
            # no link is true, so the proportion is 1 as soon as anything validates
            proportions.append(1.0 if len(build_svn(sm, alpha=ALPHA)) else 0.0)
        self.assertLessEqual(np.mean(proportions), FDR_BOUND)

    def test_leadlag_links(self):
        cfg = sweep.SweepConfig()
        coupling = synth.Coupling(0, 3600, 1, 600, 0.0)
        proportions = []
        for seed in range(20):
            ts = synth.generate_market(replace(PLANTED, seed=seed, couplings=(coupling,)))
            p1, p2 = partitions_at(ts, cfg, 3600, 600)
            with self.subTest(seed=seed):
                self.assertGreater(p1.n_groups, 0)
                self.assertGreater(p2.n_groups, 0)
            net = leadlag_network(ts, 3600, 600, p1, p2)
            proportions.append(1.0 if len(net) else 0.0)
        self.assertLessEqual(np.mean(proportions), FDR_BOUND)


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class PlantedRecoveryTestCase(TestCase):
    def test_groups(self):
        cfg = sweep.SweepConfig()
        scores = []
        for seed in range(10):
            market = replace(PLANTED, seed=seed)
            ts = synth.generate_market(market)
            detected, = partitions_at(ts, cfg, 300)
            planted = synth.planted_truth(market).partition
            scores.append(synth.partition_ari(detected, planted, market.trader_ids))
        self.assertGreaterEqual(np.mean(scores), 0.9)

    def test_leadlag(self):
        cfg = sweep.SweepConfig()
        market = replace(PLANTED, couplings=(synth.Coupling(0, 3600, 1, 600, 0.8),))
        source, target = market.groups()
        found, planted_links, all_links = 0, 0, 0
        for seed in range(10):
            ts = synth.generate_market(replace(market, seed=seed))
            p1, p2 = partitions_at(ts, cfg, 3600, 600)
            src, dst = p1.assignment.get(source[0]), p2.assignment.get(target[0])
            net = leadlag_network(ts, 3600, 600, p1, p2)
            planted = [link for link in net.links
                       if (link.src_group, link.dst_group) == (src, dst)]
            found += any(link.src_state == link.dst_state != 0 for link in planted)
            planted_links += len(planted)
            all_links += len(net)
        self.assertGreaterEqual(found, 9)
        self.assertGreaterEqual(planted_links / max(all_links, 1), 0.9)


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class ZumbachSignTestCase(TestCase):
    coarse, fine = 1800, 600
    # 30 windows of 20 days, half overlapping
    config = sweep.SweepConfig(t_in_days=(20,), window_step_days=10, grid_min_s=600,
                               grid_max_s=1800, grid_step_s=1200)
    market = synth.SynthConfig(n_traders=20, group_sizes=(5, 5), n_days=310,
                               coupling_gain=3.0)

    def rho_row(self, beta_coarse_fine: float, beta_fine_coarse: float) -> pd.Series:
        couplings = synth.asymmetric_couplings(0, 1, self.coarse, self.fine,
                                               beta_coarse_fine, beta_fine_coarse)
        ts = synth.generate_market(replace(self.market, couplings=couplings))
        result = sweep.run_sweep(ts, self.config)
        self.assertEqual(len(result.windows), 30)
        rows = stats.asymmetry_report(result)['rho_n'].to_frame()
        match = rows[(rows['dt1'] == self.coarse) & (rows['dt2'] == self.fine)]
        return match.iloc[0]

    def test_coarse_drives_fine(self):
        row = self.rho_row(0.8, 0.2)
        self.assertGreater(row['tstat'], 0)
        self.assertTrue(row['fdr_pass'])

    def test_fine_drives_coarse(self):
        row = self.rho_row(0.2, 0.8)
        self.assertLess(row['tstat'], 0)
        self.assertTrue(row['fdr_pass'])


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class TimeReversalTestCase(TestCase):
    def test_transposed_networks(self):
        cfg = sweep.SweepConfig()
        market = synth.SynthConfig(n_traders=20, group_sizes=(5, 5), n_days=10,
                                   couplings=(synth.Coupling(0, 1800, 1, 600, 0.8),))
        for seed in range(10):
            with self.subTest(seed=seed):
                ts = synth.generate_market(replace(market, seed=seed))
                reverse = ingest.reverse_session_time(ts)
                p1, p2 = partitions_at(ts, cfg, 1800, 600)
                q2, q1 = partitions_at(reverse, cfg, 600, 1800)
                self.assertEqual((q1, q2), (p1, p2))
                self.assertGreater(p1.n_groups, 0)
                self.assertGreater(p2.n_groups, 0)
                forward = leadlag_network(ts, 1800, 600, p1, p2)
                self.assertGreater(len(forward), 0)
                backward = leadlag_network(reverse, 600, 1800, q2, q1)
                transposed = sorted(leadlag.LeadLagLink(g2, s2, g1, s1, p)
                                    for g1, s1, g2, s2, p in forward.links)
                self.assertEqual(list(backward.links), transposed)


@unittest.skipUnless(SLOW, 'set SVNET_SLOW_TESTS=1 to run')
class SweepPerformanceTestCase(TestCase):
    market = synth.SynthConfig(n_traders=200, group_sizes=(10, 10, 10, 10), n_days=60)
    # 12 timescales, 5 windows of 40 days
    config = dict(t_in_days=40, window_step_days=5, grid_min_s=1200, grid_max_s=14400,
                  grid_step_s=1200)

    @classmethod
    def setUpClass(cls):
        cls.ts = synth.generate_market(cls.market)

    def test_deterministic_across_workers(self):
        small = sweep.sweep_config(dict(self.config, grid_min_s=3600, grid_max_s=7200,
                                        grid_step_s=3600))
        serial = sweep.run_sweep(self.ts, small)
        for threads in (4, -1):
            with self.subTest(threads=threads):
                parallel = sweep.run_sweep(self.ts, replace(small, threads=threads))
                pd.testing.assert_frame_equal(parallel.cells, serial.cells)
                pd.testing.assert_frame_equal(parallel.summaries, serial.summaries)

    def test_desk_scale(self):
        if (os.cpu_count() or 1) < 8:
            self.skipTest('needs 8 cores')
        elapsed = {}
        for threads in (1, 8):
            cfg = sweep.sweep_config(dict(self.config, threads=threads))
            started = time.time()
            result = sweep.run_sweep(self.ts, cfg)
            elapsed[threads] = time.time() - started
            self.assertEqual(len(result.windows), 5)
            self.assertEqual(len(result.grid.unordered_pairs), 78)
        self.assertLess(elapsed[8], 30 * 60)
        self.assertGreaterEqual(elapsed[1] / elapsed[8], 3.0)
