"""Shared training utilities: the Adam optimizer, binary cross entropy and
central-difference gradient checking.

Models keep their trainable arrays in a ``dict`` of name to
:class:`numpy.ndarray`; gradients use the same keys.
"""
import logging

import numpy as np

log = logging.getLogger(__name__)

GRADIENT_FLOOR = 1e-8
"""Denominator floor of :func:`relative_error`."""


class Adam(object):
    """Adam (adaptive moment estimation) updating a dict of arrays in place.

    Each :meth:`step` does::

        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        theta -= lr * m_hat / (sqrt(v_hat) + eps)

    with the bias-corrected ``m_hat``, ``v_hat``.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be > 0, got {}".format(learning_rate))
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1), got ({}, {})".format(beta1, beta2))
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads):
        """Apply one update.

        :param grads: Gradient per parameter name; names missing from ``grads`` are left alone.
        """
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            self.params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def bce_with_logit(logit, label):
    """Binary cross entropy of ``sigmoid(logit)`` against ``label``, computed
    stably as ``log(1 + e^z) - y z``. Its derivative in ``z`` is ``sigmoid(z) - y``."""
    return np.logaddexp(0.0, logit) - label * logit


def relative_error(analytic, numeric):
    """Elementwise ``|a - n| / max(|a|, |n|, 1e-8)``."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRADIENT_FLOOR)
    return np.abs(analytic - numeric) / scale


def numeric_gradients(loss, params, h=1e-5):
    """Central-difference gradient of ``loss()`` with respect to every entry of
    every array in ``params``. Arrays are perturbed in place and restored.

    :param loss: Zero-argument callable evaluating the objective at the current ``params``.
    :param params: ``name -> array`` (float64).
    :rtype: dict
    """
    grads = {}
    for name, array in params.items():
        g = np.zeros_like(array)
        flat = array.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss()
            flat[i] = original - h
            down = loss()
            flat[i] = original
            g_flat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """Largest :func:`relative_error` over all named gradient arrays."""
    worst = 0.0
    for name in analytic:
        err = relative_error(analytic[name], numeric[name])
        if not err.size:
            continue
        log.debug("gradient check %s: max relative error %.3e", name, err.max())
        worst = max(worst, float(err.max()))
    return worst
