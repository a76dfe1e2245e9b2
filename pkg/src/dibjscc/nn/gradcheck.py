"""Central-difference verification of ``Tape`` gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Parameter, Tape, Tensor, using_dtype
from .layers import Module


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; 0 when both gradients vanish."""
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return 0.0 if den == 0 else float(num / den)


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-3) -> float:
    """Max over ``params`` of the relative error between backward and central differences.

    The check runs in float64 so the difference quotient is not swamped by
    float32 rounding; parameter data is restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    saved = [p.data for p in params]
    try:
        with using_dtype(np.float64):
            for p in params:
                p.data = p.data.astype(np.float64)
            with Tape() as tape:
                loss = loss_fn()
            analytic = tape.gradient(loss, params)
            worst = 0.0
            for p, a in zip(params, analytic):
                numeric = np.zeros_like(p.data)
                flat, nflat = p.data.reshape(-1), numeric.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    up = float(loss_fn().data)
                    flat[i] = orig - eps
                    down = float(loss_fn().data)
                    flat[i] = orig
                    nflat[i] = (up - down) / (2 * eps)
                worst = max(worst, relative_error(a, numeric))
    finally:
        for p, d in zip(params, saved):
            p.data = d
    return worst


def finite_difference_check(net: Module, x: np.ndarray, eps: float = 1e-3, seed: int = 0) -> float:
    """Gradcheck ``net`` on input ``x`` through a fixed random linear read-out.

    A random projection keeps the check meaningful for softmax heads, whose
    plain output sum is constant.
    """
    out_shape = net(Tensor(x)).shape
    proj = np.random.default_rng(seed).standard_normal(out_shape)

    def loss_fn():
        return (net(Tensor(x)) * Tensor(proj)).sum()

    return gradcheck(loss_fn, net.parameters(), eps)
