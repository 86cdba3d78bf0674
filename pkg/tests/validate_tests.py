"""
Tests for the validate module
"""
import math
import os
import tempfile
from unittest import TestCase

import numpy as np

from svnet import exceptions, validate
from svnet.store import api as store_api
from svnet.store.tables import SvnLinkTable
from tests.helpers import state_matrix_of

NA = 127


def exact_tail(T, n_p, n_q, n_pq):
    total = math.comb(T, n_q)
    return sum(math.comb(n_p, x) * math.comb(T - n_p, n_q - x)
               for x in range(n_pq, min(n_p, n_q) + 1)) / total


class CooccurrenceTestCase(TestCase):
    def test_counts(self):
        counts = validate.cooccurrence_counts([1, 1, 0, None], [1, 0, 0, 1], (1, 1))
        self.assertEqual(counts, (4, 2, 2, 1))
        self.assertEqual(validate.cooccurrence_counts([1] * 5, [1] * 5, (1, 1)),
                         (5, 5, 5, 5))
        self.assertEqual(validate.cooccurrence_counts([1, NA], [NA, 1], (1, 1))[3], 0)

    def test_length_mismatch(self):
        self.assertRaises(exceptions.ValidationException, validate.cooccurrence_counts,
                          [1, 1], [1], (1, 1))

    def test_co_test(self):
        result = validate.co_test([1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
                                  [1, 1, 1, 1, 1, -1, -1, -1, -1, -1], (1, 1))
        self.assertEqual(result[:4], (10, 5, 5, 5))
        self.assertAlmostEqual(result.p_value, 1 / 252, places=14)


class HypergeomTestCase(TestCase):
    def test_hand_values(self):
        self.assertAlmostEqual(validate.hypergeom_pvalue(10, 5, 5, 5), 1 / 252, places=14)
        self.assertAlmostEqual(validate.hypergeom_pvalue(4, 2, 2, 2), 1 / 6, places=14)

    def test_zero_cooccurrence(self):
        self.assertEqual(validate.hypergeom_pvalue(30, 7, 11, 0), 1.0)
        self.assertEqual(validate.hypergeom_pvalue(10, 0, 0, 0), 1.0)

    def test_matches_exact_sum(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            T = int(rng.integers(1, 51))
            n_p, n_q = int(rng.integers(0, T + 1)), int(rng.integers(0, T + 1))
            lo, hi = max(0, n_p + n_q - T), min(n_p, n_q)
            n_pq = int(rng.integers(lo, hi + 1))
            self.assertAlmostEqual(validate.hypergeom_pvalue(T, n_p, n_q, n_pq),
                                   exact_tail(T, n_p, n_q, n_pq), places=12)

    def test_symmetry_and_monotonicity(self):
        self.assertAlmostEqual(validate.hypergeom_pvalue(40, 12, 25, 9),
                               validate.hypergeom_pvalue(40, 25, 12, 9), places=14)
        tail = [validate.hypergeom_pvalue(40, 12, 25, x) for x in range(0, 13)]
        self.assertTrue(all(x >= y for x, y in zip(tail, tail[1:])))

    def test_large_counts_stay_finite(self):
        # about four standard deviations above the mean of 25000
        p = validate.hypergeom_pvalue(100000, 50000, 50000, 25300)
        self.assertGreater(p, 0.0)
        self.assertLess(p, 1e-3)
        self.assertGreater(validate.hypergeom_pvalue(100000, 50000, 50000, 25000), 0.4)

    def test_underflowing_tail_stays_positive(self):
        p = validate.hypergeom_pvalue(20000, 10000, 10000, 10000)
        self.assertEqual(p, validate.MIN_PVALUE)
        self.assertGreater(p, 0.0)
        tail = validate.hypergeom_pvalues([20000] * 3, [10000] * 3, [10000] * 3,
                                          [9000, 9500, 10000])
        self.assertTrue((tail > 0).all())
        self.assertTrue((np.diff(tail) <= 0).all())

    def test_vectorized(self):
        p = validate.hypergeom_pvalues([10, 4, 30], [5, 2, 7], [5, 2, 11], [5, 2, 0])
        np.testing.assert_allclose(p, [1 / 252, 1 / 6, 1.0], rtol=1e-12)

    def test_inconsistent_counts(self):
        for counts in ((10, 5, 5, 6), (10, 11, 5, 1), (10, 8, 8, 5), (-1, 0, 0, 0)):
            self.assertRaises(exceptions.ValidationException, validate.hypergeom_pvalue,
                              *counts)


class BHThresholdTestCase(TestCase):
    def test_hand_computed(self):
        result = validate.bh_threshold([0.001, 0.01, 0.02, 0.8], 0.05, m=4)
        self.assertEqual(result.threshold, 0.02)
        self.assertEqual(list(result.rejected), [True, True, True, False])

    def test_nothing_rejected(self):
        result = validate.bh_threshold([1.0, 1.0], 0.05)
        self.assertIsNone(result.threshold)
        self.assertFalse(result.rejected.any())

    def test_single(self):
        self.assertTrue(validate.bh_threshold([0.04], 0.05, m=1).rejected[0])

    def test_untested_count_in_m(self):
        self.assertFalse(validate.bh_threshold([0.04], 0.05, m=2).rejected[0])

    def test_step_up(self):
        # p_(1) fails its own bound but is rejected through p_(2)
        result = validate.bh_threshold([0.03, 0.04], 0.05)
        self.assertEqual(list(result.rejected), [True, True])

    def test_arbitrary_dependence(self):
        p = [0.001, 0.01, 0.02, 0.8]
        result = validate.bh_threshold(p, 0.05, dependence='arbitrary')
        # alpha / (1 + 1/2 + 1/3 + 1/4) = 0.024
        self.assertEqual(list(result.rejected), [True, True, False, False])

    def test_invalid(self):
        self.assertRaises(exceptions.ConfigException, validate.bh_threshold, [0.1], 1.5)
        self.assertRaises(exceptions.ConfigException, validate.bh_threshold, [0.1], 0.05,
                          dependence='none')
        self.assertRaises(exceptions.ValidationException, validate.bh_threshold,
                          [0.1, 0.2], 0.05, m=1)


class BuildSvnTestCase(TestCase):
    clone = [1, -1] * 20
    other = [1, 1, -1, -1] * 10

    def test_clones_linked(self):
        sm = state_matrix_of([self.clone, self.clone, self.other], ['a', 'b', 'c'])
        svn = validate.build_svn(sm, alpha=0.05, min_active_slices=10)
        self.assertEqual([link[:4] for link in svn.links],
                         [('a', 'b', -1, -1), ('a', 'b', 1, 1)])
        self.assertEqual(svn.edge_weights(), [('a', 'b', 2)])
        self.assertEqual(svn.nodes, ('a', 'b'))
        self.assertEqual(svn.universe, ('a', 'b', 'c'))
        # neutral states never occur, so only the signed pairs are tested
        self.assertEqual(svn.n_tests, 6)

    def test_p_value_of_clone_link(self):
        sm = state_matrix_of([self.clone, self.clone])
        svn = validate.build_svn(sm)
        self.assertAlmostEqual(svn.links[0].p_value, 1 / math.comb(40, 20), places=20)

    def test_inactive_traders_not_tested(self):
        quiet = [NA] * 38 + [1, -1]
        sm = state_matrix_of([self.clone, self.clone, quiet], ['a', 'b', 'c'])
        svn = validate.build_svn(sm, min_active_slices=10)
        self.assertEqual(svn.universe, ('a', 'b'))
        self.assertEqual(svn.n_tests, 2)

    def test_joint_activity(self):
        half = [NA] * 20 + [1, -1] * 10
        sm = state_matrix_of([half, half, self.clone], ['a', 'b', 'c'])
        plain = validate.build_svn(sm, min_active_slices=1)
        joint = validate.build_svn(sm, min_active_slices=1,
                                   condition_on_joint_activity=True)
        self.assertIn(('a', 'b'), [link[:2] for link in plain.links])
        self.assertIn(('a', 'b'), [link[:2] for link in joint.links])
        # a and c agree on every slot where both trade
        self.assertIn(('a', 'c'), [link[:2] for link in joint.links])

    def test_single_trader(self):
        sm = state_matrix_of([self.clone])
        self.assertRaises(exceptions.InsufficientDataException, validate.build_svn, sm)

    def test_too_few_eligible(self):
        sm = state_matrix_of([self.clone, [NA] * 39 + [1]])
        svn = validate.build_svn(sm, min_active_slices=10)
        self.assertEqual(len(svn), 0)

    def test_bad_pairs(self):
        sm = state_matrix_of([self.clone, self.clone])
        self.assertRaises(exceptions.ConfigException, validate.build_svn, sm,
                          pairs=[(1, 2)])

    def test_export(self):
        sm = state_matrix_of([self.clone, self.clone])
        svn = validate.build_svn(sm, window_id=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'svn.csv')
            validate.export_svn(svn, path)
            frame = store_api.read_rows(SvnLinkTable, path)
        self.assertEqual(list(frame['window_id']), [3, 3])
        self.assertEqual(list(frame['state_i']), [-1, 1])
