"""Non-sequential baselines: a linear SVM on length or count features and a
one-hidden-layer perceptron on count features.

Both standardize their inputs with statistics of the training split; the
fitted :class:`Standardizer` travels with the model.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from clickpredict.convergence import MaxIterationsStopStrategy, check_finite
from clickpredict.optim import Adam, bce_with_logit, max_relative_error, numeric_gradients

log = logging.getLogger(__name__)

STD_FLOOR = 1e-12

supported_feature_kinds = ["length", "counts"]


class Standardizer(object):
    """Per-feature z-scoring. Columns whose standard deviation falls below
    :attr:`STD_FLOOR` (constant on the training split) are only centred."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std differ in shape")
        if not np.all(self.std > 0):
            raise ValueError("standard deviations must be > 0")

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std < STD_FLOOR, 1.0, std))

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise ValueError("expected {} feature columns, got shape {}".format(self.mean.size, X.shape))
        return (X - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, document):
        return cls(document["mean"], document["std"])


def _check_training_set(X, labels):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ValueError("features {} do not match {} labels".format(X.shape, labels.size))
    if set(np.unique(labels).tolist()) != {0, 1}:
        raise ValueError("training data must contain both labels, got {}".format(sorted(set(labels.tolist()))))
    return X, labels


@dataclass(frozen=True)
class SvmConfig:
    lam: float = 1e-4
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0, got {}".format(self.lam))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1, got {}".format(self.epochs))

    def to_dict(self):
        return asdict(self)


class LinearModel(object):
    """A linear decision function ``w . z(x) + b`` over standardized features ``z(x)``."""

    def __init__(self, w, b, feature_kind, scaler):
        if feature_kind not in supported_feature_kinds:
            raise ValueError("unknown feature kind: {}".format(feature_kind))
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.feature_kind = feature_kind
        self.scaler = scaler
        if self.w.shape != scaler.mean.shape:
            raise ValueError("weights of shape {} do not match scaler of shape {}".format(
                self.w.shape, scaler.mean.shape))

    @property
    def D(self):
        return self.w.size

    def decision_function(self, X):
        return self.scaler.transform(X) @ self.w + self.b

    def to_document(self):
        return {"w": self.w.tolist(), "b": self.b, "feature_kind": self.feature_kind,
                "scaler": self.scaler.to_dict()}

    @classmethod
    def from_document(cls, document):
        return cls(document["w"], document["b"], document["feature_kind"],
                   Standardizer.from_dict(document["scaler"]))


def hinge_objective(w, b, Z, labels, lam):
    """``lam/2 (|w|^2 + b^2) + mean(max(0, 1 - y (w . z + b)))`` with ``y`` in ``{-1, +1}``.

    The bias is regularized like a weight on a constant feature.
    """
    y = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    margins = y * (np.asarray(Z) @ w + b)
    return 0.5 * lam * (float(w @ w) + b * b) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def linear_svm_train(X, labels, feature_kind, cfg=SvmConfig()):
    """Fit an L2-regularized hinge-loss classifier with seeded stochastic
    subgradient steps (step size ``1/(lam t)``, projection onto the ball of
    radius ``1/sqrt(lam)``) and return the average of the iterates from the
    second half of the run.

    :param X: ``N x D`` raw features; standardized here by their own statistics.
    :param labels: ``0``/``1`` labels.
    :rtype: :class:`LinearModel`
    """
    X, labels = _check_training_set(X, labels)
    scaler = Standardizer.fit(X)
    Z = np.hstack([scaler.transform(X), np.ones((X.shape[0], 1))])
    y = 2.0 * labels - 1.0
    n, d = Z.shape
    rng = np.random.default_rng(cfg.seed)
    radius = 1.0 / np.sqrt(cfg.lam)
    total = cfg.epochs * n
    burn_in = total // 2
    w = np.zeros(d)
    average = np.zeros(d)
    t = 0
    for epoch in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (cfg.lam * t)
            violated = y[i] * (Z[i] @ w) < 1.0
            w *= 1.0 - eta * cfg.lam
            if violated:
                w += eta * y[i] * Z[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            if t > burn_in:
                average += (w - average) / (t - burn_in)
        objective = hinge_objective(average[:-1], average[-1], Z[:, :-1], labels, cfg.lam)
        check_finite(objective, "SVM objective")
        log.debug("svm epoch %d: objective %.6f", epoch + 1, objective)
    log.info("trained linear SVM on %d samples x %d %s features: objective %.5f", n, d - 1, feature_kind,
             objective)
    return LinearModel(average[:-1], average[-1], feature_kind, scaler)


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 100
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError("{} must be >= 1, got {}".format(name, getattr(self, name)))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0, got {}".format(self.learning_rate))

    def to_dict(self):
        return asdict(self)


class MlpParams(object):
    """One rectified hidden layer and a logistic output unit.

    :ivar W1: ``D x Hm`` input weights.
    :ivar b1: ``Hm`` hidden biases.
    :ivar w2: ``Hm`` output weights.
    :ivar b2: ``(1,)`` output bias.
    """
    names = ("W1", "b1", "w2", "b2")

    def __init__(self, W1, b1, w2, b2, feature_kind="counts", scaler=None):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64).reshape(1)
        self.feature_kind = feature_kind
        D, Hm = self.W1.shape
        self.scaler = scaler if scaler is not None else Standardizer(np.zeros(D), np.ones(D))
        if self.b1.shape != (Hm,) or self.w2.shape != (Hm,):
            raise ValueError("inconsistent MLP shapes: W1 {}, b1 {}, w2 {}".format(
                self.W1.shape, self.b1.shape, self.w2.shape))
        for name in self.names:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError("{} has non-finite entries".format(name))

    @property
    def D(self):
        return self.W1.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in self.names}

    def logits(self, Z):
        return np.maximum(Z @ self.W1 + self.b1, 0.0) @ self.w2 + self.b2[0]

    def predict_proba(self, X):
        return expit(self.logits(self.scaler.transform(X)))

    def to_document(self):
        document = {name: getattr(self, name).tolist() for name in self.names}
        document.update({"feature_kind": self.feature_kind, "scaler": self.scaler.to_dict()})
        return document

    @classmethod
    def from_document(cls, document):
        return cls(document["W1"], document["b1"], document["w2"], document["b2"],
                   document["feature_kind"], Standardizer.from_dict(document["scaler"]))


def _mlp_loss_and_grads(params, Z, labels):
    pre = Z @ params.W1 + params.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params.w2 + params.b2[0]
    n = float(Z.shape[0])
    loss = float(np.mean(bce_with_logit(logits, labels)))
    dlogits = (expit(logits) - labels) / n
    dhidden = np.outer(dlogits, params.w2) * (pre > 0)
    grads = {"W1": Z.T @ dhidden, "b1": dhidden.sum(axis=0), "w2": hidden.T @ dlogits,
             "b2": np.array([dlogits.sum()])}
    return loss, grads


def mlp_train(X, labels, cfg=MlpConfig(), feature_kind="counts"):
    """Train the perceptron with Adam on mean binary cross entropy.

    :rtype: :class:`MlpParams`
    :raises DivergenceError: when an epoch's loss is not finite.
    """
    X, labels = _check_training_set(X, labels)
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    y = labels.astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    D = Z.shape[1]
    params = MlpParams(W1=rng.normal(0.0, np.sqrt(2.0 / D), size=(D, cfg.hidden)), b1=np.zeros(cfg.hidden),
                       w2=rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=cfg.hidden), b2=np.zeros(1),
                       feature_kind=feature_kind, scaler=scaler)
    optimizer = Adam(params.arrays(), cfg.learning_rate)
    stop = MaxIterationsStopStrategy(cfg.epochs)
    losses = []
    epoch = 0
    while True:
        epoch += 1
        order = rng.permutation(Z.shape[0])
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _mlp_loss_and_grads(params, Z[idx], y[idx])
            optimizer.step(grads)
            total += loss * idx.size
        losses.append(check_finite(total / order.size, "MLP epoch loss"))
        log.debug("mlp epoch %d: mean loss %.6f", epoch, losses[-1])
        if not stop.should_continue(epoch, losses):
            break
    log.info("trained MLP (%d hidden) on %d samples: final loss %.5f", cfg.hidden, Z.shape[0], losses[-1])
    return params


def mlp_gradient_check(params, Z, labels, h=1e-5):
    """Max relative error between analytic and central-difference gradients
    of the mean BCE on standardized inputs ``Z``."""
    params = MlpParams(**{n: a.copy() for n, a in params.arrays().items()}, feature_kind=params.feature_kind,
                       scaler=params.scaler)
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _, analytic = _mlp_loss_and_grads(params, Z, y)
    numeric = numeric_gradients(lambda: _mlp_loss_and_grads(params, Z, y)[0], params.arrays(), h)
    return max_relative_error(analytic, numeric)
