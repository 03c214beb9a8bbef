"""Small numerical helpers shared by the trainable combiners."""
from __future__ import annotations

import numpy as np

from .static import log_softmax

INV_SOFTPLUS_ONE = float(np.log(np.e - 1.0))  # softplus(x) == 1


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(t):
    t = np.asarray(t, dtype=np.float64)
    return t + np.log(-np.expm1(-t))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n
