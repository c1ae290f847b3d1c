"""Multiclass softmax cross-entropy: probabilities, loss, gradient and hessian."""
import numpy as np


def softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(scores, y):
    """Mean negative log-likelihood of class indices ``y`` under ``softmax(scores)``."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    m = scores.max(axis=1)
    lse = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
    return float(np.mean(lse - scores[np.arange(len(y)), y]))


def softmax_grad_hess(scores, y):
    """Per-class gradient ``p - onehot(y)`` and diagonal hessian ``p (1 - p)``.

    ``scores`` may be a single score vector with a scalar ``y`` or an
    ``(n, K)`` matrix with ``n`` labels.
    """
    p = softmax(scores)
    grad = p.copy()
    if grad.ndim == 1:
        grad[int(y)] -= 1.0
    else:
        y = np.asarray(y, dtype=np.int64)
        grad[np.arange(len(y)), y] -= 1.0
    hess = p * (1.0 - p)
    return grad, hess
