import math
import unittest

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from clickpredict.stats import SIGNIFICANCE_COLUMNS, compare_to_weakest, significance_frame, students_t_test


def t_density(x, df):
    log_norm = gammaln((df + 1) / 2.0) - gammaln(df / 2.0) - 0.5 * math.log(df * math.pi)
    return math.exp(log_norm - (df + 1) / 2.0 * math.log1p(x * x / df))


def two_tailed_p(t, df):
    tail, _ = quad(t_density, abs(t), np.inf, args=(df,), epsabs=1e-13, epsrel=1e-12)
    return 2.0 * tail


class TestStudentsTTest(unittest.TestCase):

    def test_statistic_by_hand(self):
        result = students_t_test([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        # pooled variance 1, standard error sqrt(2/3)
        self.assertAlmostEqual(result.t_statistic, -3.0 / math.sqrt(2.0 / 3.0))
        self.assertEqual(result.degrees_of_freedom, 4)

    def test_p_value_matches_density_integral(self):
        cases = [([0.61, 0.64, 0.60, 0.66], [0.55, 0.57, 0.58, 0.52]),
                 ([0.7, 0.71, 0.69], [0.70, 0.72, 0.68, 0.71, 0.69]),
                 ([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 9.0])]
        for a, b in cases:
            result = students_t_test(a, b)
            self.assertAlmostEqual(result.p_value, two_tailed_p(result.t_statistic, result.degrees_of_freedom),
                                   places=8)

    def test_symmetry(self):
        a, b = [0.5, 0.6, 0.55], [0.7, 0.65, 0.72]
        forward, backward = students_t_test(a, b), students_t_test(b, a)
        self.assertAlmostEqual(forward.t_statistic, -backward.t_statistic)
        self.assertAlmostEqual(forward.p_value, backward.p_value)

    def test_identical_samples(self):
        result = students_t_test([0.5, 0.6], [0.5, 0.6])
        self.assertEqual(result.t_statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 1.0)
        self.assertFalse(result.significant)

    def test_zero_variance(self):
        self.assertEqual(students_t_test([0.5, 0.5], [0.5, 0.5]).p_value, 1.0)
        different = students_t_test([0.6, 0.6], [0.5, 0.5])
        self.assertEqual(different.p_value, 0.0)
        self.assertTrue(math.isinf(different.t_statistic))
        self.assertTrue(different.significant)

    def test_needs_two_observations(self):
        with self.assertRaises(ValueError):
            students_t_test([0.5], [0.5, 0.6])


class TestCompareToWeakest(unittest.TestCase):

    def test_everything_against_lowest_mean(self):
        comparisons = compare_to_weakest({"lstm": [0.8, 0.82], "svm_l": [0.6, 0.61], "mlp": [0.7, 0.69]})
        self.assertEqual([(a, b) for a, b, _ in comparisons], [("lstm", "svm_l"), ("mlp", "svm_l")])
        frame = significance_frame(comparisons)
        self.assertEqual(list(frame.columns), SIGNIFICANCE_COLUMNS)
        self.assertTrue(frame["significant@0.05"].all())

    def test_single_config(self):
        self.assertEqual(compare_to_weakest({"lstm": [0.8, 0.9]}), [])


if __name__ == '__main__':
    unittest.main()
