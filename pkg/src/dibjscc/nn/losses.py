"""Scalar losses.  Forward sums run in float64, results are cast back."""

from __future__ import annotations

import numpy as np

from .autograd import PROB_FLOOR, ShapeError, Tensor, _record, as_tensor


def _scalar(value: float, like: Tensor) -> np.ndarray:
    return np.asarray(value, dtype=like.data.dtype)


def _check_onehot(onehot: np.ndarray) -> None:
    ok = np.all((onehot == 0) | (onehot == 1), axis=1) & (onehot.sum(axis=1) == 1)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise ValueError(f"row {bad} is not a valid one-hot vector: {onehot[bad]}")


def cross_entropy_nll(probs, onehot, floor: float = PROB_FLOOR) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` rows are probability vectors; ``onehot`` rows select the class.
    Probabilities are clamped at ``floor`` before the log.
    """
    probs = as_tensor(probs)
    target = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot)
    if probs.shape != target.shape or probs.ndim != 2:
        raise ShapeError(f"cross_entropy_nll: probs {probs.shape} vs onehot {target.shape}")
    _check_onehot(target)
    B = probs.shape[0]
    cls = target.argmax(axis=1)
    rows = np.arange(B)
    p_true = probs.data[rows, cls].astype(np.float64)
    clamped = np.maximum(p_true, floor)
    value = -np.log(clamped).sum() / B

    def vjp(g):
        grad = np.zeros_like(probs.data)
        live = p_true > floor
        grad[rows[live], cls[live]] = (-1.0 / (B * clamped[live])).astype(grad.dtype)
        return (grad * g,)

    return _record(_scalar(value, probs), (probs,), vjp)


def mse(a, b) -> Tensor:
    """Mean over all elements of ``(a - b)**2``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data
    n = diff.size
    value = np.dot(diff.ravel(), diff.ravel()) / n

    def vjp(g):
        ga = (diff * (2.0 / n)).astype(a.data.dtype) * g
        return ga, -ga

    return _record(_scalar(value, a), (a, b), vjp)


def sse(a, b) -> Tensor:
    """Batch mean of per-row sums of squared error, ``mean_i ||a_i - b_i||^2``."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"sse expects [B, N] inputs, got {a.shape}")
    return mse(a, b) * float(a.shape[1])


def per_sample_mse(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return ((a - b) ** 2).reshape(len(a), -1).mean(axis=1)


def entropy(probs, floor: float = PROB_FLOOR) -> Tensor:
    """Batch-mean Shannon entropy (nats) of probability rows, with 0 log 0 = 0."""
    probs = as_tensor(probs)
    if probs.ndim != 2:
        raise ShapeError(f"entropy expects [B, K], got {probs.shape}")
    if np.any(probs.data < 0):
        raise ValueError("entropy: negative probability in input")
    p = probs.data.astype(np.float64)
    B = p.shape[0]
    logp = np.log(np.maximum(p, floor))
    value = -(p * logp).sum() / B

    def vjp(g):
        # d/dp of -p log max(p, floor)
        grad = np.where(p > floor, -(logp + 1.0), -logp) / B
        return (grad.astype(probs.data.dtype) * g,)

    return _record(_scalar(value, probs), (probs,), vjp)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax equals ``labels`` (class indices)."""
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


__all__ = ["cross_entropy_nll", "mse", "sse", "entropy", "per_sample_mse", "accuracy"]
