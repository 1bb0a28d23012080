"""A single-layer LSTM sequence classifier written directly against numpy.

Tokens are embedded, run through one LSTM layer (``h_0 = c_0 = 0``), the hidden
states are mean-pooled over time, (inverted) dropout is applied to the pooled
vector during training only, and a logistic unit produces the probability of
label ``1``. Training minimizes mean binary cross entropy with Adam and exact
backpropagation through time.

Gate pre-activations are stacked in the order input, forget, output, candidate:
rows ``[0:H]`` of ``W``, ``U`` and ``b`` belong to the input gate, ``[H:2H]`` to
the forget gate and so on.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from scipy.special import expit

from clickpredict.convergence import MaxIterationsStopStrategy, check_finite
from clickpredict.optim import Adam, bce_with_logit, max_relative_error, numeric_gradients

log = logging.getLogger(__name__)

FORGET_BIAS = 1.0
GATES = ("i", "f", "o", "g")
PARAM_NAMES = ("embedding", "W", "U", "b", "w_out", "b_out")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of :func:`lstm_train`."""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 32
    dropout_p: float = 0.5
    seed: int = 0
    max_seq_len: int = 2000
    embedding_dim: int = 32
    hidden_dim: int = 64
    deterministic: bool = True
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1), got {}".format(self.dropout_p))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0, got {}".format(self.learning_rate))
        for name in ("epochs", "batch_size", "max_seq_len", "embedding_dim", "hidden_dim", "threads"):
            if getattr(self, name) < 1:
                raise ValueError("{} must be >= 1, got {}".format(name, getattr(self, name)))

    def to_dict(self):
        return asdict(self)


class LstmParams(object):
    """Trainable arrays of the sequence classifier.

    :ivar embedding: ``V x E`` token embeddings.
    :ivar W: ``4H x E`` stacked input-to-gate weights.
    :ivar U: ``4H x H`` stacked recurrent weights.
    :ivar b: ``4H`` stacked gate biases.
    :ivar w_out: ``H`` output weights.
    :ivar b_out: ``(1,)`` output bias.
    """

    def __init__(self, embedding, W, U, b, w_out, b_out):
        self.embedding = np.asarray(embedding, dtype=np.float64)
        self.W = np.asarray(W, dtype=np.float64)
        self.U = np.asarray(U, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.w_out = np.asarray(w_out, dtype=np.float64)
        self.b_out = np.asarray(b_out, dtype=np.float64).reshape(1)
        self.validate()

    @property
    def V(self):
        return self.embedding.shape[0]

    @property
    def E(self):
        return self.embedding.shape[1]

    @property
    def H(self):
        return self.U.shape[1]

    def validate(self):
        V, E = self.embedding.shape
        H = self.U.shape[1]
        expected = {"W": (4 * H, E), "U": (4 * H, H), "b": (4 * H,), "w_out": (H,), "b_out": (1,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError("{} has shape {}, expected {}".format(name, getattr(self, name).shape, shape))
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError("{} has non-finite entries".format(name))

    def arrays(self):
        """``name -> array`` view of the parameters (shared, not copied)."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def gate(self, name, which="W"):
        """The ``H``-row block of ``W``, ``U`` or ``b`` belonging to one gate."""
        k = GATES.index(name)
        return getattr(self, which)[k * self.H:(k + 1) * self.H]

    def copy(self):
        return LstmParams(**{name: a.copy() for name, a in self.arrays().items()})

    @classmethod
    def zeros(cls, V, E, H):
        return cls(np.zeros((V, E)), np.zeros((4 * H, E)), np.zeros((4 * H, H)), np.zeros(4 * H),
                   np.zeros(H), np.zeros(1))

    @classmethod
    def initialize(cls, V, E, H, rng):
        """Small random weights; the forget-gate bias starts at :attr:`FORGET_BIAS`."""
        scale = 1.0 / np.sqrt(H)
        b = np.zeros(4 * H)
        b[H:2 * H] = FORGET_BIAS
        return cls(embedding=rng.normal(0.0, 0.1, size=(V, E)),
                   W=rng.uniform(-scale, scale, size=(4 * H, E)),
                   U=rng.uniform(-scale, scale, size=(4 * H, H)),
                   b=b,
                   w_out=rng.uniform(-scale, scale, size=H),
                   b_out=np.zeros(1))

    def to_document(self):
        return {"V": self.V, "E": self.E, "H": self.H,
                "arrays": {name: {"shape": list(a.shape), "values": a.ravel().tolist()}
                           for name, a in self.arrays().items()}}

    @classmethod
    def from_document(cls, document):
        arrays = {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
                  for name, entry in document["arrays"].items()}
        return cls(**arrays)


def _check_tokens(tokens, V):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("token sequence must be a non-empty 1-d sequence")
    if tokens.min() < 0 or tokens.max() >= V:
        raise ValueError("token id outside [0, {})".format(V))
    return tokens


class _Trace(object):
    """Forward intermediates of one sequence, kept for the backward pass."""
    __slots__ = ("tokens", "X", "gates", "cells", "hidden", "mask", "dropped", "prob")


def _forward(tokens, params, mask=None):
    H = params.H
    T = tokens.size
    X = params.embedding[tokens]
    pre_input = X @ params.W.T + params.b
    gates = np.empty((T, 4 * H))
    cells = np.empty((T + 1, H))
    hidden = np.empty((T + 1, H))
    cells[0] = 0.0
    hidden[0] = 0.0
    U = params.U
    for t in range(T):
        z = pre_input[t] + U @ hidden[t]
        act = gates[t]
        act[:3 * H] = expit(z[:3 * H])
        act[3 * H:] = np.tanh(z[3 * H:])
        cells[t + 1] = act[H:2 * H] * cells[t] + act[:H] * act[3 * H:]
        hidden[t + 1] = act[2 * H:3 * H] * np.tanh(cells[t + 1])
    pooled = hidden[1:].mean(axis=0)
    dropped = pooled if mask is None else pooled * mask
    logit = float(params.w_out @ dropped + params.b_out[0])
    trace = _Trace()
    trace.tokens, trace.X, trace.gates, trace.cells, trace.hidden = tokens, X, gates, cells, hidden
    trace.mask, trace.dropped = mask, dropped
    return logit, trace


def _backward(trace, params, dlogit):
    """Gradients of a loss with ``dL/dlogit = dlogit`` with respect to every parameter."""
    H = params.H
    T = trace.tokens.size
    grads = {"w_out": dlogit * trace.dropped, "b_out": np.array([dlogit])}
    dpooled = dlogit * params.w_out
    if trace.mask is not None:
        dpooled = dpooled * trace.mask
    dh_pool = dpooled / T
    dZ = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    U = params.U
    for t in range(T - 1, -1, -1):
        act = trace.gates[t]
        i, f, o, g = act[:H], act[H:2 * H], act[2 * H:3 * H], act[3 * H:]
        tanh_c = np.tanh(trace.cells[t + 1])
        dh = dh_pool + dh_next
        dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
        dz = dZ[t]
        dz[:H] = dc * g * i * (1.0 - i)
        dz[H:2 * H] = dc * trace.cells[t] * f * (1.0 - f)
        dz[2 * H:3 * H] = dh * tanh_c * o * (1.0 - o)
        dz[3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = U.T @ dz
    grads["W"] = dZ.T @ trace.X
    grads["U"] = dZ.T @ trace.hidden[:-1]
    grads["b"] = dZ.sum(axis=0)
    embedding = np.zeros_like(params.embedding)
    np.add.at(embedding, trace.tokens, dZ @ params.W)
    grads["embedding"] = embedding
    return grads


def lstm_forward(tokens, params, dropout_p=0.0, rng=None):
    """Probability of label ``1`` for one token sequence.

    :param tokens: Non-empty sequence of ids below ``params.V``.
    :param dropout_p: Dropout probability on the pooled vector; ``0`` is inference mode.
    :param rng: :class:`numpy.random.Generator`, required iff ``dropout_p > 0``.
    :rtype: float
    """
    tokens = _check_tokens(tokens, params.V)
    mask = None
    if dropout_p > 0.0:
        if rng is None:
            raise ValueError("dropout needs a random generator")
        mask = _dropout_mask(rng, params.H, dropout_p)
    logit, _ = _forward(tokens, params, mask)
    return float(expit(logit))


def _dropout_mask(rng, H, p):
    return (rng.random(H) >= p) / (1.0 - p)


def _sample_loss_and_grads(tokens, label, params, mask):
    logit, trace = _forward(tokens, params, mask)
    loss = float(bce_with_logit(logit, label))
    return loss, _backward(trace, params, float(expit(logit)) - label)


def batch_loss_and_grads(batch, labels, params, masks=None, executor=None, ordered=True):
    """Mean BCE over a batch and its gradient. Sequences are processed one by
    one and their gradients averaged.

    :param batch: Token id arrays.
    :param masks: Optional dropout masks, one per sequence.
    :param executor: Optional executor mapping sequences in parallel.
    :param ordered: Sum per-sequence gradients in batch order. Otherwise an
        executor's results are summed as they complete, which may differ in
        the last bits between runs.
    """
    masks = masks if masks is not None else [None] * len(batch)
    jobs = list(zip(batch, labels, masks))

    def one(job):
        return _sample_loss_and_grads(job[0], job[1], params, job[2])

    if executor is None:
        results = [one(j) for j in jobs]
    elif ordered:
        results = list(executor.map(one, jobs))
    else:
        results = [f.result() for f in as_completed([executor.submit(one, j) for j in jobs])]
    n = float(len(results))
    loss = sum(r[0] for r in results) / n
    grads = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    for _, g in results:
        for name in grads:
            grads[name] += g[name]
    for name in grads:
        grads[name] /= n
    return loss, grads


@dataclass(frozen=True)
class EpochRecord:
    """One line of the training log."""
    epoch: int
    mean_loss: float
    train_acc: float
    val_acc: Optional[float] = None


def predict_proba(sequences, params, max_seq_len=None):
    """Inference-mode probabilities for a list of token sequences."""
    return np.array([lstm_forward(s if max_seq_len is None else s[:max_seq_len], params)
                     for s in sequences])


def _accuracy(probs, labels):
    return float(np.mean((np.asarray(probs) >= 0.5).astype(int) == np.asarray(labels)))


def lstm_train(sequences, labels, vocab_size, cfg, validation=None):
    """Train an LSTM classifier.

    :param sequences: Token id sequences; each is cut to its first ``cfg.max_seq_len`` tokens.
    :param labels: ``0``/``1`` per sequence; both classes must be present.
    :param vocab_size: Number of distinct token ids ``V``.
    :param cfg: :class:`TrainConfig`.
    :param validation: Optional ``(sequences, labels)`` scored after every epoch.
    :return: Trained parameters and the per-epoch training log.
    :rtype: tuple of (LstmParams, list of EpochRecord)
    :raises DivergenceError: when an epoch's mean loss is not finite.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(sequences) < 2 or len(sequences) != labels.size:
        raise ValueError("need at least 2 labelled sequences, got {} sequences / {} labels".format(
            len(sequences), labels.size))
    if set(np.unique(labels).tolist()) != {0, 1}:
        raise ValueError("training data must contain both labels, got {}".format(sorted(set(labels.tolist()))))
    data = [_check_tokens(s, vocab_size)[:cfg.max_seq_len] for s in sequences]

    rng = np.random.default_rng(cfg.seed)
    params = LstmParams.initialize(vocab_size, cfg.embedding_dim, cfg.hidden_dim, rng)
    optimizer = Adam(params.arrays(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    stop = MaxIterationsStopStrategy(cfg.epochs)
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    history: List[EpochRecord] = []
    losses = []
    log.info("training LSTM on %d sequences (V=%d, E=%d, H=%d, %d epochs)", len(data), vocab_size,
             cfg.embedding_dim, cfg.hidden_dim, cfg.epochs)
    try:
        epoch = 0
        while True:
            epoch += 1
            order = rng.permutation(len(data))
            epoch_loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                masks = None
                if cfg.dropout_p > 0.0:
                    masks = [_dropout_mask(rng, params.H, cfg.dropout_p) for _ in idx]
                loss, grads = batch_loss_and_grads([data[i] for i in idx], labels[idx], params, masks, executor,
                                                  ordered=cfg.deterministic)
                check_finite(loss, "LSTM batch loss")
                optimizer.step(grads)
                epoch_loss += loss * len(idx)
                log.debug("epoch %d batch %d: loss %.6f", epoch, start // cfg.batch_size, loss)
            mean_loss = check_finite(epoch_loss / len(data), "LSTM epoch loss")
            losses.append(mean_loss)
            train_acc = _accuracy(predict_proba(data, params), labels)
            val_acc = None
            if validation is not None and len(validation[0]):
                val_acc = _accuracy(predict_proba(validation[0], params, cfg.max_seq_len), validation[1])
            history.append(EpochRecord(epoch, mean_loss, train_acc, val_acc))
            log.info("epoch %d: mean loss %.5f, train acc %.4f%s", epoch, mean_loss, train_acc,
                     "" if val_acc is None else ", val acc {:.4f}".format(val_acc))
            if not stop.should_continue(epoch, losses):
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return params, history


def gradient_check(params, sequences, labels, h=1e-5):
    """Compare the analytic gradient of the mean BCE over a small batch with
    central finite differences (dropout disabled).

    :return: Max over all parameter entries of ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)``.
    :rtype: float
    """
    params = params.copy()
    batch = [_check_tokens(s, params.V) for s in sequences]
    labels = np.asarray(labels, dtype=np.float64)
    _, analytic = batch_loss_and_grads(batch, labels, params)

    def loss():
        return np.mean([bce_with_logit(_forward(s, params)[0], y) for s, y in zip(batch, labels)])

    numeric = numeric_gradients(loss, params.arrays(), h)
    return max_relative_error(analytic, numeric)
