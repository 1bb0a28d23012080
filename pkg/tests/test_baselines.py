import unittest

import numpy as np
from scipy.optimize import minimize

from clickpredict.baselines import (
    LinearModel, MlpConfig, MlpParams, Standardizer, SvmConfig, hinge_objective, linear_svm_train,
    mlp_gradient_check, mlp_train
)


def hinge_oracle(Z, labels, lam):
    """Solve the regularized hinge problem as a smooth QP with slack variables."""
    y = 2.0 * np.asarray(labels, dtype=float) - 1.0
    n, d = Z.shape

    def objective(v):
        w, b, xi = v[:d], v[d], v[d + 1:]
        return 0.5 * lam * (w @ w + b * b) + xi.mean()

    constraints = [{"type": "ineq", "fun": lambda v: y * (Z @ v[:d] + v[d]) - 1.0 + v[d + 1:]},
                   {"type": "ineq", "fun": lambda v: v[d + 1:]}]
    start = np.concatenate([np.zeros(d + 1), np.ones(n)])
    result = minimize(objective, start, method="SLSQP", constraints=constraints,
                      options={"ftol": 1e-12, "maxiter": 1000})
    return result.fun


class TestStandardizer(unittest.TestCase):

    def test_z_scores(self):
        scaler = Standardizer.fit([[1.0, 5.0], [3.0, 5.0]])
        np.testing.assert_allclose(scaler.transform([[1.0, 5.0], [3.0, 5.0]]), [[-1.0, 0.0], [1.0, 0.0]])

    def test_constant_column_is_only_centred(self):
        scaler = Standardizer.fit([[7.0], [7.0], [7.0]])
        self.assertEqual(scaler.std[0], 1.0)
        np.testing.assert_allclose(scaler.transform([[9.0]]), [[2.0]])

    def test_width_mismatch(self):
        with self.assertRaises(ValueError):
            Standardizer.fit([[1.0, 2.0]]).transform([[1.0]])


class TestLinearSvm(unittest.TestCase):

    def test_separates_lengths(self):
        X = np.array([[1.0], [2.0], [3.0], [10.0], [11.0], [12.0]])
        labels = np.array([0, 0, 0, 1, 1, 1])
        model = linear_svm_train(X, labels, "length", SvmConfig(lam=1e-2, epochs=200))
        predictions = (model.decision_function(X) >= 0.0).astype(int)
        np.testing.assert_array_equal(predictions, labels)

    def test_objective_close_to_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 2))
        labels = (X[:, 0] + 0.5 * X[:, 1] + 0.7 * rng.normal(size=20) > 0).astype(int)
        lam = 0.1
        model = linear_svm_train(X, labels, "counts", SvmConfig(lam=lam, epochs=3000, seed=1))
        Z = model.scaler.transform(X)
        reference = hinge_oracle(Z, labels, lam)
        achieved = hinge_objective(model.w, model.b, Z, labels, lam)
        self.assertLessEqual(achieved, reference * 1.01)

    def test_seed_determines_model(self):
        X = np.arange(10, dtype=float).reshape(-1, 1)
        labels = (X[:, 0] > 4).astype(int)
        first = linear_svm_train(X, labels, "length", SvmConfig(seed=3))
        second = linear_svm_train(X, labels, "length", SvmConfig(seed=3))
        np.testing.assert_array_equal(first.w, second.w)

    def test_single_class_rejected(self):
        with self.assertRaises(ValueError):
            linear_svm_train([[1.0], [2.0]], [1, 1], "length")

    def test_document_round_trip(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [1.0, 3.0]])
        model = linear_svm_train(X, [0, 1, 0, 1], "counts", SvmConfig(epochs=5))
        restored = LinearModel.from_document(model.to_document())
        np.testing.assert_allclose(restored.decision_function(X), model.decision_function(X))

    def test_unknown_feature_kind(self):
        with self.assertRaises(ValueError):
            LinearModel([0.0], 0.0, "bigrams", Standardizer([0.0], [1.0]))


class TestMlp(unittest.TestCase):

    def test_learns_xor(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] * 4)
        labels = np.array([0, 1, 1, 0] * 4)
        params = mlp_train(X, labels, MlpConfig(hidden=16, learning_rate=0.01, epochs=1000, batch_size=16))
        predictions = (params.predict_proba(X) >= 0.5).astype(int)
        np.testing.assert_array_equal(predictions, labels)

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        params = MlpParams(W1=rng.normal(size=(3, 5)), b1=rng.normal(size=5), w2=rng.normal(size=5),
                           b2=rng.normal(size=1))
        Z = rng.normal(size=(6, 3))
        self.assertLess(mlp_gradient_check(params, Z, [0, 1, 1, 0, 1, 0]), 1e-4)

    def test_document_round_trip(self):
        X = np.array([[1.0, 2.0], [2.0, 0.0], [0.0, 1.0], [3.0, 3.0]])
        params = mlp_train(X, [0, 1, 0, 1], MlpConfig(hidden=4, epochs=3))
        restored = MlpParams.from_document(params.to_document())
        np.testing.assert_allclose(restored.predict_proba(X), params.predict_proba(X))

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            MlpConfig(hidden=0)


if __name__ == '__main__':
    unittest.main()
