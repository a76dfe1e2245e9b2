"""AWGN wiretap channel: power normalization, noise injection, SNR measurement.

Codewords are normalized to unit average power per dimension, so a link at
``snr_db`` adds noise of variance ``10 ** (-snr_db / 10)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .nn import autograd as ag
from .nn.autograd import Tensor

Normalization = Literal["unit_average_power", "none"]


class DegenerateInputError(ValueError):
    pass


def parse_snr(value) -> float:
    """Accepts numbers or the strings ``"inf"`` / ``"+inf"`` for a noiseless link."""
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "+inf"):
            return math.inf
        return float(v)
    return float(value)


@dataclass(frozen=True)
class ChannelSpec:
    snr_db: float
    normalize: Normalization = "unit_average_power"

    def __post_init__(self):
        object.__setattr__(self, "snr_db", parse_snr(self.snr_db))
        if self.normalize not in ("unit_average_power", "none"):
            raise ValueError(f"unknown normalization policy {self.normalize!r}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"invalid snr_db {self.snr_db}")

    @property
    def noise_variance(self) -> float:
        return 0.0 if math.isinf(self.snr_db) else 10.0 ** (-self.snr_db / 10.0)


def power_normalize(y) -> Tensor:
    """Scale each row so its mean squared entry is 1 (differentiable)."""
    y = ag.as_tensor(y)
    if y.ndim != 2:
        raise ag.ShapeError(f"power_normalize expects [B, M], got {y.shape}")
    zero = ~np.any(y.data != 0, axis=1)
    if np.any(zero):
        raise DegenerateInputError(f"cannot normalize all-zero codeword rows {np.flatnonzero(zero)[:5].tolist()}")
    power = ag.mean(ag.square(y), axis=1, keepdims=True)
    return y / ag.sqrt(power)


def draw_noise(shape, spec: ChannelSpec, rng: np.random.Generator, dtype=np.float32) -> np.ndarray | None:
    """Noise samples for one use of the link, or ``None`` for the noiseless sentinel."""
    var = spec.noise_variance
    if var == 0.0:
        return None
    return (rng.standard_normal(shape) * np.sqrt(var)).astype(dtype)


def awgn(y, spec: ChannelSpec, rng: np.random.Generator | None = None,
         noise: np.ndarray | None = None) -> Tensor:
    """``y + z`` with ``z ~ N(0, sigma^2 I)``; the noise is a constant for backward.

    Pass ``noise`` to reuse a previous draw instead of sampling from ``rng``.
    """
    y = ag.as_tensor(y)
    if noise is None:
        if spec.noise_variance == 0.0:
            return y
        noise = draw_noise(y.shape, spec, rng, y.data.dtype)
    elif noise.shape != y.shape:
        raise ag.ShapeError(f"awgn: noise shape {noise.shape} does not match signal {y.shape}")
    return y + Tensor(noise)


def transmit(y, spec: ChannelSpec, rng: np.random.Generator | None = None,
             noise: np.ndarray | None = None) -> Tensor:
    """Apply the link's power policy, then the noisy link."""
    if spec.normalize == "unit_average_power":
        y = power_normalize(y)
    return awgn(y, spec, rng, noise)


def measured_snr(clean, noisy) -> float:
    """``10 log10(sum clean^2 / sum (noisy - clean)^2)``; ``inf`` for zero noise."""
    clean = np.asarray(clean.data if isinstance(clean, Tensor) else clean, dtype=np.float64)
    noisy = np.asarray(noisy.data if isinstance(noisy, Tensor) else noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ag.ShapeError(f"measured_snr: shapes {clean.shape} and {noisy.shape} differ")
    signal = float(np.sum(clean ** 2))
    if signal == 0:
        raise DegenerateInputError("clean signal is all zero")
    noise = float(np.sum((noisy - clean) ** 2))
    if noise == 0:
        return math.inf
    return 10.0 * math.log10(signal / noise)
