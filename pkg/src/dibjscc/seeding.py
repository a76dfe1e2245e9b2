"""Deterministic per-component RNG streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data_train", "data_test", "init", "channel_ab", "channel_ae", "passwords",
           "guesses", "shuffle", "probe", "eval")


def stream(master_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for component ``name``; ``extra`` ints refine it (e.g. a sweep cell)."""
    key = [int(master_seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *(int(e) & 0xFFFFFFFF for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
