"""Named collection of every network in the system, with checkpoint I/O."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn.checkpoint import load_into, load_params, save_params
from .nn.layers import MLP, Dense, Module

# component name -> short description
COMPONENTS = {
    "enc_t": "public encoder",
    "enc_s": "private encoder",
    "dec": "decoder at the legitimate receiver",
    "cls": "private-label classifier on the private subcodeword",
    "dis": "joint-vs-shuffled discriminator",
    "encryptor": "password-conditioned encryptor",
    "decryptor": "password-conditioned decryptor",
    "eve": "eavesdropper on the protected codeword",
    "eve_bar": "eavesdropper using a guessed password",
}

PIXELS = 2352
NUM_CLASSES = 10
EVE_HIDDEN = (64, 64)
CLS_HIDDEN = 64
DIS_HIDDEN = (64, 64)
# bounded codeword entries keep either subcodeword from claiming the whole
# power budget after joint normalization
ENCODER_OUT = "tanh"


class ModelBundle(Module):
    """Holds whichever components have been built; absent ones are ``None``."""

    def __init__(self, m_s: int, m_t: int, num_classes: int = NUM_CLASSES, pixels: int = PIXELS):
        self.m_s, self.m_t = int(m_s), int(m_t)
        self.num_classes = int(num_classes)
        self.pixels = int(pixels)
        self.nets: dict[str, Module | None] = {name: None for name in COMPONENTS}

    @property
    def m(self) -> int:
        return self.m_s + self.m_t

    def __getattr__(self, name):
        nets = self.__dict__.get("nets")
        if nets is not None and name in nets:
            net = nets[name]
            if net is None:
                raise AttributeError(f"component {name!r} ({COMPONENTS[name]}) has not been built")
            return net
        raise AttributeError(name)

    def has(self, name: str) -> bool:
        return self.nets.get(name) is not None

    def named_parameters(self, prefix: str = ""):
        for name, net in self.nets.items():
            if net is not None:
                yield from net.named_parameters(f"{prefix}{name}.")

    def component_parameters(self, *names: str):
        return [p for n in names for p in self.nets[n].parameters()]

    # construction

    def build(self, names: Iterable[str], rng: np.random.Generator, len_: int = 16) -> "ModelBundle":
        """Create the listed components with fresh Glorot weights drawn from ``rng``."""
        m, S = self.m, self.num_classes
        makers = {
            "enc_t": lambda: MLP([self.pixels, 512, 128, self.m_t], ENCODER_OUT, rng),
            "enc_s": lambda: MLP([self.pixels, 512, 128, self.m_s], ENCODER_OUT, rng),
            "dec": lambda: MLP([m, 256, 512, self.pixels], "sigmoid", rng),
            "cls": lambda: MLP([self.m_s, CLS_HIDDEN, S], "softmax", rng),
            "dis": lambda: MLP([m, *DIS_HIDDEN, 2], "softmax", rng),
            "encryptor": lambda: Dense(self.m_s + len_, self.m_s, "identity", rng),
            "decryptor": lambda: Dense(self.m_s + len_, self.m_s, "identity", rng),
            "eve": lambda: MLP([m, *EVE_HIDDEN, S], "softmax", rng),
            "eve_bar": lambda: MLP([m, *EVE_HIDDEN, S], "softmax", rng),
        }
        for name in names:
            if name not in makers:
                raise KeyError(f"unknown component {name!r}")
            self.nets[name] = makers[name]()
        return self

    # persistence

    def save(self, path, names: Iterable[str] | None = None) -> None:
        names = set(names) if names is not None else {n for n, v in self.nets.items() if v is not None}
        state = {k: p.data for k, p in self.named_parameters() if k.split(".", 1)[0] in names}
        save_params(state, path)

    def load(self, path, names: Iterable[str]) -> None:
        """Load the listed (already built) components from a checkpoint."""
        params = load_params(path)
        wanted = set(names)
        target = {k: p for k, p in self.named_parameters() if k.split(".", 1)[0] in wanted}
        load_into(target, params)

    def copy_from(self, other: "ModelBundle", names: Iterable[str]) -> None:
        for name in names:
            src = dict(other.nets[name].named_parameters())
            for k, p in self.nets[name].named_parameters():
                p.data = src[k].data.copy()
