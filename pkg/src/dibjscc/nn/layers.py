"""Dense layers and MLPs built on the autograd primitives."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor

ACTIVATIONS = {
    "relu": ag.relu,
    "sigmoid": ag.sigmoid,
    "tanh": ag.tanh,
    "softmax": ag.softmax,
    "identity": ag.identity,
}


class Module:
    """Anything owning named parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ag.ShapeError(f"parameter {name!r}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense(Module):
    """``activation(x @ W + b)`` with W of shape [in_dim, out_dim]."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = Parameter(glorot_uniform(rng, in_dim, out_dim), name="weight")
        self.bias = Parameter(np.zeros(out_dim), name="bias")

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)

    def __repr__(self) -> str:
        return f"Dense({self.in_dim}->{self.out_dim}, {self.activation})"


def dense_forward(layer: Dense, x, tape: ag.Tape | None = None) -> Tensor:
    """Apply one dense layer; records onto ``tape`` when given, else the active tape."""
    x = ag.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ag.ShapeError(
            f"dense: input shape {x.shape} incompatible with layer weight shape {layer.weight.shape}")
    if tape is None:
        return ACTIVATIONS[layer.activation](ag.linear(x, layer.weight, layer.bias))
    with tape:
        return ACTIVATIONS[layer.activation](ag.linear(x, layer.weight, layer.bias))


class MLP(Module):
    """Stack of dense layers: relu on hidden layers, ``out_activation`` last."""

    def __init__(self, dims: Sequence[int], out_activation: str = "identity",
                 rng: np.random.Generator | None = None, hidden_activation: str = "relu"):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dims = tuple(int(d) for d in dims)
        self.layers = [
            Dense(i, o, hidden_activation if k < len(dims) - 2 else out_activation, rng)
            for k, (i, o) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def named_parameters(self, prefix: str = ""):
        for k, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{k}.")

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def predict(self, x: np.ndarray, batch_size: int = 2048) -> np.ndarray:
        """Tape-free forward over a numpy array, in chunks."""
        outs = [self(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.out_dim), np.float32)

    def __repr__(self) -> str:
        return f"MLP({'->'.join(map(str, self.dims))}, out={self.layers[-1].activation})"
