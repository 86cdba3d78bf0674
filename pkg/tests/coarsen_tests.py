"""
Tests for the coarsen module
"""
import datetime
import math
import os
import tempfile
from unittest import TestCase

import numpy as np

from svnet import coarsen, exceptions
from svnet.metadata import StateAlphabet
from svnet.store import api as store_api
from svnet.store.tables import StateTable
from tests.helpers import CAL, MONDAY, session_ms, trade_set

NA = coarsen.NA


class SliceGridTestCase(TestCase):
    def test_slices_per_day(self):
        for delta_t, expected in ((14400, 2), (300, 96), (11000, 2), (28800, 1)):
            grid = coarsen.slice_grid(CAL, delta_t, range(3))
            self.assertEqual(grid.slices_per_day, expected)
            self.assertEqual(grid.n_slices, 3 * expected)

    def test_invalid_delta_t(self):
        self.assertRaises(exceptions.ConfigException, coarsen.slice_grid, CAL, 0,
                          range(1))
        self.assertRaises(exceptions.ConfigException, coarsen.slice_grid, CAL, 28801,
                          range(1))
        self.assertRaises(exceptions.ConfigException, coarsen.slice_grid, CAL, 300.5,
                          range(1))

    def test_slice_ids(self):
        grid = coarsen.slice_grid(CAL, 3600, range(2, 4))
        self.assertEqual(grid.slice_id(3, 1), 9)
        self.assertEqual(grid.locate(9), (3, 1))
        self.assertEqual(grid.bounds_ms(1), (3600000, 7200000))
        self.assertRaises(IndexError, grid.slice_id, 1, 0)


class ImbalanceTestCase(TestCase):
    def test_buy_and_sell(self):
        v, a, rho = coarsen.trader_imbalance([100, -50])
        self.assertEqual((v, a), (50.0, 150.0))
        self.assertAlmostEqual(rho, 1 / 3)

    def test_single_sell(self):
        self.assertEqual(coarsen.trader_imbalance([-10]).rho, -1.0)

    def test_no_trades(self):
        self.assertIsNone(coarsen.trader_imbalance([]).rho)


class AssignStateTestCase(TestCase):
    def test_thresholds(self):
        self.assertEqual(coarsen.assign_state(1 / 3, 0.01), 1)
        self.assertEqual(coarsen.assign_state(0.0, 0.01), 0)
        self.assertEqual(coarsen.assign_state(-0.005, 0.01), 0)
        self.assertEqual(coarsen.assign_state(0.01, 0.01), 0)
        self.assertEqual(coarsen.assign_state(-0.5, 0.01), -1)
        self.assertEqual(coarsen.assign_state(None, 0.01), NA)

    def test_vectorized_matches_scalar(self):
        rho = np.array([1 / 3, 0.0, -0.005, 0.01, -0.5, np.nan])
        expected = [coarsen.assign_state(None if math.isnan(r) else r, 0.01) for r in rho]
        self.assertEqual(list(coarsen.assign_states(rho, 0.01)), expected)


class StateMatrixTestCase(TestCase):
    tuesday = datetime.date(2024, 1, 2)

    def test_hand_computed(self):
        ts = trade_set([('a', session_ms(MONDAY, 10), 100.0),
                        ('a', session_ms(MONDAY, 20), -50.0),
                        ('a', session_ms(MONDAY, 700), -1.0),
                        ('b', session_ms(MONDAY, 350), 2.0),
                        ('b', session_ms(MONDAY, 360), -2.0),
                        ('b', session_ms(MONDAY, 650), 3.0)])
        grid = coarsen.slice_grid(CAL, 300, range(1))
        sm = coarsen.state_matrix(ts, grid, rho0=0.01)
        self.assertEqual(sm.traders, ('a', 'b'))
        np.testing.assert_array_equal(sm.states[:, :3], [[1, NA, -1], [NA, 0, 1]])
        np.testing.assert_array_equal(sm.n_trades[:, :3], [[2, 0, 1], [0, 2, 1]])
        self.assertEqual(sm.net_volume[0, 0], 50.0)
        self.assertEqual(sm.turnover[1, 1], 4.0)
        np.testing.assert_array_equal(sm.active_slices(), [2, 2])

    def test_one_buy_per_slice(self):
        ts = trade_set([('a', session_ms(MONDAY, 3600 * k + 1), 1.0) for k in range(8)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 3600, range(1)))
        self.assertTrue((sm.row('a') == 1).all())

    def test_inactive_days_are_na(self):
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0),
                        ('b', session_ms(self.tuesday, 5), 1.0)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 14400, range(2)))
        np.testing.assert_array_equal(sm.row('a'), [1, NA, NA, NA])
        np.testing.assert_array_equal(sm.row('b'), [NA, NA, 1, NA])
        self.assertEqual(sm.dates, (MONDAY, self.tuesday))

    def test_trailing_partial_slice_dropped(self):
        # 11000 s slices: the last 6800 s of the session belong to no slice
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0),
                        ('a', session_ms(MONDAY, 25000), -1.0)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 11000, range(1)))
        np.testing.assert_array_equal(sm.row('a'), [1, NA])
        self.assertEqual(int(sm.n_trades.sum()), 1)

    def test_turnover_conservation(self):
        rng = np.random.default_rng(3)
        offsets = rng.integers(0, 28800, 200)
        volumes = rng.normal(size=200)
        ts = trade_set([(f't{i % 7}', session_ms(MONDAY, float(o)), float(v))
                        for i, (o, v) in enumerate(zip(offsets, volumes)) if v != 0])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 600, range(1)))
        self.assertAlmostEqual(float(sm.turnover.sum()), float(np.abs(ts.volumes).sum()))

    def test_window_restricts_days(self):
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0),
                        ('b', session_ms(self.tuesday, 5), 1.0)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 28800, range(1, 2)))
        self.assertEqual(sm.traders, ('b',))

    def test_activity_alphabet(self):
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0),
                        ('a', session_ms(MONDAY, 14405), -1.0)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 14400, range(1)),
                                  alphabet=StateAlphabet.ACTIVITY)
        np.testing.assert_array_equal(sm.row('a'), [1, 1])

    def test_invalid_rho0(self):
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0)])
        grid = coarsen.slice_grid(CAL, 300, range(1))
        self.assertRaises(exceptions.ConfigException, coarsen.state_matrix, ts, grid,
                          rho0=0.0)

    def test_export(self):
        ts = trade_set([('a', session_ms(MONDAY, 5), 1.0)])
        sm = coarsen.state_matrix(ts, coarsen.slice_grid(CAL, 14400, range(1)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'states.csv')
            coarsen.export_states(sm, path)
            frame = store_api.read_rows(StateTable, path)
        self.assertEqual(list(frame['state']), ['1', 'NA'])
        self.assertEqual(list(frame['day']), ['2024-01-01', '2024-01-01'])
