import unittest

import numpy as np

from clickpredict.optim import Adam, bce_with_logit, max_relative_error, numeric_gradients, relative_error


class TestAdam(unittest.TestCase):

    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        optimizer = Adam(params, learning_rate=0.1)
        for _ in range(5):
            optimizer.step({"w": np.zeros(3)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0, 3.0])

    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([0.0, 0.0])}
        Adam(params, learning_rate=0.01).step({"w": np.array([4.0, -0.5])})
        np.testing.assert_allclose(params["w"], [-0.01, 0.01], rtol=1e-6)

    def test_updates_in_place(self):
        w = np.array([1.0])
        Adam({"w": w}, learning_rate=0.5).step({"w": np.array([1.0])})
        self.assertLess(w[0], 1.0)

    def test_minimizes_quadratic(self):
        params = {"x": np.array([5.0, -3.0])}
        optimizer = Adam(params, learning_rate=0.1)
        for _ in range(2000):
            optimizer.step({"x": 2.0 * params["x"]})
        np.testing.assert_allclose(params["x"], 0.0, atol=1e-3)

    def test_invalid_settings(self):
        with self.assertRaises(ValueError):
            Adam({}, learning_rate=0.0)
        with self.assertRaises(ValueError):
            Adam({}, beta1=1.0)


class TestLossAndGradients(unittest.TestCase):

    def test_bce_matches_definition(self):
        z, y = 0.3, 1
        p = 1.0 / (1.0 + np.exp(-z))
        self.assertAlmostEqual(bce_with_logit(z, y), -np.log(p))
        self.assertAlmostEqual(bce_with_logit(z, 0), -np.log(1.0 - p))

    def test_bce_is_stable_for_large_logits(self):
        self.assertAlmostEqual(bce_with_logit(800.0, 1), 0.0)
        self.assertAlmostEqual(bce_with_logit(-800.0, 1), 800.0)

    def test_numeric_gradients_restore_params(self):
        params = {"a": np.array([[1.0, 2.0], [3.0, 4.0]])}
        grads = numeric_gradients(lambda: float((params["a"] ** 2).sum()), params)
        np.testing.assert_allclose(grads["a"], 2.0 * params["a"], rtol=1e-7)
        np.testing.assert_array_equal(params["a"], [[1.0, 2.0], [3.0, 4.0]])

    def test_relative_error_floor(self):
        self.assertEqual(float(relative_error(0.0, 0.0)), 0.0)
        self.assertAlmostEqual(float(relative_error(1e-10, 0.0)), 1e-2)
        self.assertAlmostEqual(float(relative_error(2.0, 1.0)), 0.5)

    def test_max_relative_error(self):
        analytic = {"a": np.array([1.0, 2.0]), "b": np.array([])}
        numeric = {"a": np.array([1.0, 1.0]), "b": np.array([])}
        self.assertAlmostEqual(max_relative_error(analytic, numeric), 0.5)


if __name__ == '__main__':
    unittest.main()
