"""Fixed-budget probe classifiers used to measure label leakage from codewords."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.autograd import Tape
from .nn.layers import MLP
from .nn.losses import accuracy, cross_entropy_nll
from .nn.optim import Adam

PROBE_HIDDEN = 16
PROBE_EPOCHS = 5


@dataclass
class ProbeClassifier:
    net: MLP
    mean: np.ndarray
    scale: np.ndarray

    def predict_proba(self, codes: np.ndarray) -> np.ndarray:
        return self.net.predict(((codes - self.mean) / self.scale).astype(np.float32))

    def accuracy(self, codes: np.ndarray, labels: np.ndarray) -> float:
        if len(labels) == 0:
            raise ValueError("accuracy on an empty set")
        return accuracy(self.predict_proba(codes), labels)


def train_probe(train_codes: np.ndarray, train_labels: np.ndarray,
                test_codes: np.ndarray, test_labels: np.ndarray,
                rng: np.random.Generator, num_classes: int = 10, epochs: int = PROBE_EPOCHS,
                lr: float = 1e-3, batch_size: int = 64) -> tuple[ProbeClassifier, float]:
    """Train an in -> 16 -> classes softmax probe; returns it with its held-out accuracy.

    Inputs are standardized with training-set statistics so the probe's budget
    is not spent learning the codeword scale.
    """
    train_labels = np.asarray(train_labels)
    if len(np.unique(train_labels)) < 2:
        raise ValueError("probe training needs at least 2 distinct classes")
    if train_labels.max() >= num_classes or train_labels.min() < 0:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    mean = train_codes.mean(axis=0)
    scale = train_codes.std(axis=0) + 1e-6
    xs = ((train_codes - mean) / scale).astype(np.float32)
    onehot = np.eye(num_classes, dtype=np.float32)[train_labels]
    net = MLP([train_codes.shape[1], PROBE_HIDDEN, num_classes], "softmax", rng)
    params = net.parameters()
    opt = Adam(params, lr=lr)
    n = len(xs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            with Tape() as tape:
                loss = cross_entropy_nll(net(xs[idx]), onehot[idx])
            opt.step(tape.gradient(loss, params))
    probe = ProbeClassifier(net, mean, scale)
    return probe, probe.accuracy(test_codes, test_labels)
