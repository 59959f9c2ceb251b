"""
Label-smoothed cross-entropy: y_LS = y(1 - alpha) + alpha / K, loss = mean over the batch
of -sum_k y_LS_k log softmax(z)_k.
"""
from typing import Tuple

import numpy as np

from config import N_CLASSES
from errors import InvalidInput, NonFiniteLogits
from services.nn.tensor import assert_finite


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidInput(f"labels must lie in 0..{n_classes - 1}")
    out = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def smooth_labels(y: np.ndarray, alpha: float) -> np.ndarray:
    """Accepts one one-hot vector (K,) or a stack (N, K)."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"label smoothing factor must lie in [0, 1], got {alpha}")
    y = np.asarray(y)
    k = y.shape[-1]
    return y * (1.0 - alpha) + alpha / k


def cross_entropy_smoothed(logits: np.ndarray, labels: np.ndarray, alpha: float) -> Tuple[float, np.ndarray]:
    """Returns (loss, dloss/dlogits); the gradient is (softmax - y_LS) / N in the logits dtype."""
    if logits.ndim != 2:
        raise InvalidInput(f"logits must be (N, K), got {logits.shape}")
    assert_finite(logits, "logits", NonFiniteLogits)
    n, k = logits.shape
    target = smooth_labels(one_hot(labels, k, dtype=logits.dtype), alpha).astype(logits.dtype)
    logp = log_softmax(logits)
    loss = float(-(target * logp).sum(axis=1).mean())
    grad = (np.exp(logp) - target) / n
    return loss, grad.astype(logits.dtype, copy=False)
