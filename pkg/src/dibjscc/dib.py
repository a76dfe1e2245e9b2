"""Disentangled encoders, the two mutual-information estimators and their two-step training.

Step 1 fits the private encoder and a classifier so the private subcodeword
carries the private label. Step 2 freezes it and trains the public encoder and
decoder for reconstruction while a discriminator-based log density ratio
penalizes dependence between the public and private subcodewords.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .bundle import ModelBundle
from .channel import ChannelSpec, transmit
from .config import require
from .data import ColoredDataset, batch_iter
from .nn import autograd as ag
from .nn.autograd import PROB_FLOOR, Tape, Tensor
from .nn.layers import MLP
from .nn.losses import accuracy, cross_entropy_nll, mse, sse
from .nn.optim import Adam

JOINT = 1  # discriminator column read as "pair drawn from the joint"

DIB_FIELDS = ("m_s", "m_t", "alpha", "v_d1", "v_d2", "dis_steps", "batch_size", "snr_ab_db", "seed", "lr",
              "adam_beta1", "adam_beta2", "normalize")


def encode(bundle: ModelBundle, x) -> tuple[Tensor, Tensor]:
    """``(y_t, y_s)`` from the public and private encoders."""
    return bundle.enc_t(x), bundle.enc_s(x)


def decode(bundle: ModelBundle, y_hat) -> Tensor:
    return bundle.dec(y_hat)


def encode_numpy(bundle: ModelBundle, x: np.ndarray, batch_size: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    return bundle.enc_t.predict(x, batch_size), bundle.enc_s.predict(x, batch_size)


def vlb_private_mi(x, s, enc_s: MLP, cls: MLP) -> Tensor:
    """Variational lower bound (up to H(s)) on I(y_s; s): mean log q(s | y_s) = -NLL."""
    return -cross_entropy_nll(cls(enc_s(x)), s)


def shuffle_pairs(y_t, y_s, rng: np.random.Generator):
    """Independently permute the batch rows of ``y_t`` and ``y_s``."""
    B = len(y_t)
    if B < 2:
        raise ValueError(f"shuffle_pairs needs a batch of at least 2 rows, got {B}")
    if len(y_s) != B:
        raise ag.ShapeError(f"shuffle_pairs: batch sizes {B} and {len(y_s)} differ")
    pt, ps = rng.permutation(B), rng.permutation(B)
    take = lambda y, idx: y[idx] if isinstance(y, np.ndarray) else ag.take_rows(y, idx)
    return take(y_t, pt), take(y_s, ps)


def _pair_probs(dis: MLP, y_t, y_s) -> Tensor:
    return dis(ag.concat([ag.as_tensor(y_t), ag.as_tensor(y_s)], axis=1))


def discriminator_loss(y_t, y_s, y_t_shuf, y_s_shuf, dis: MLP, floor: float = PROB_FLOOR) -> Tensor:
    """Binary cross-entropy pushing ``dis`` toward "joint" on aligned pairs and away on shuffled ones."""
    joint = _pair_probs(dis, y_t, y_s)
    marg = _pair_probs(dis, y_t_shuf, y_s_shuf)
    B, Bm = joint.shape[0], marg.shape[0]
    ones = np.zeros((B, 2), np.float32)
    ones[:, JOINT] = 1
    zeros = np.zeros((Bm, 2), np.float32)
    zeros[:, 1 - JOINT] = 1
    return cross_entropy_nll(joint, ones, floor) + cross_entropy_nll(marg, zeros, floor)


def density_ratio_mi(y_t, y_s, dis: MLP, floor: float = PROB_FLOOR) -> Tensor:
    """Mean log odds of "joint" over aligned pairs; differentiable through ``y_t`` and ``y_s``."""
    probs = _pair_probs(dis, y_t, y_s)
    p1 = ag.getitem(probs, (slice(None), JOINT))
    p0 = ag.getitem(probs, (slice(None), 1 - JOINT))
    return ag.mean(ag.log(p1, floor) - ag.log(p0, floor))


def fit_discriminator(dis: MLP, sample_pairs, steps: int, rng: np.random.Generator,
                      lr: float = 1e-3) -> list[float]:
    """Train ``dis`` alone; ``sample_pairs()`` returns a fresh aligned ``(y_t, y_s)`` batch."""
    opt = Adam(dis.parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        y_t, y_s = sample_pairs()
        yt_sh, ys_sh = shuffle_pairs(y_t, y_s, rng)
        with Tape() as tape:
            loss = discriminator_loss(y_t, y_s, yt_sh, ys_sh, dis)
        opt.step(tape.gradient(loss, opt.params))
        losses.append(loss.item())
    return losses


@dataclass
class DIBHistory:
    rows: list[dict] = field(default_factory=list)
    seconds: dict[str, float] = field(default_factory=dict)

    COLUMNS = ("stage", "epoch", "L_C", "L_B", "L_A", "L_dis", "mi_est", "test_acc", "test_mse")


def test_mse(bundle: ModelBundle, data: ColoredDataset, spec: ChannelSpec, rng: np.random.Generator,
             batch_size: int = 1000) -> float:
    """Mean squared reconstruction error of the unprotected pipeline on ``data``."""
    total, n = 0.0, 0
    for lo in range(0, len(data), batch_size):
        x = data.pixels[lo:lo + batch_size]
        y_t, y_s = encode(bundle, x)
        x_hat = decode(bundle, transmit(ag.concat([y_t, y_s], axis=1), spec, rng))
        total += float(mse(x_hat, x).data) * len(x)
        n += len(x)
    return total / n


def train_step1(bundle: ModelBundle, train: ColoredDataset, config, epochs: int,
                test: ColoredDataset | None = None, history: DIBHistory | None = None) -> None:
    """Fit the private encoder and classifier on the private-label NLL (noiseless)."""
    history = history if history is not None else DIBHistory()
    params = bundle.component_parameters("enc_s", "cls")
    opt = Adam(params, lr=config.lr, betas=(config.adam_beta1, config.adam_beta2))
    shuf = seeding.stream(config.seed, "shuffle", 1)
    for epoch in range(1, epochs + 1):
        tot, n = 0.0, 0
        for x, s, _ in batch_iter(train, config.batch_size, shuf):
            with Tape() as tape:
                loss = -vlb_private_mi(x, s, bundle.enc_s, bundle.cls)
            opt.step(tape.gradient(loss, params))
            tot += loss.item() * len(x)
            n += len(x)
        row = {"stage": 1, "epoch": epoch, "L_C": tot / n}
        if test is not None:
            probs = bundle.cls.predict(bundle.enc_s.predict(test.pixels))
            row["test_acc"] = accuracy(probs, test.colors)
        history.rows.append(row)


def train_step2(bundle: ModelBundle, train: ColoredDataset, config, epochs: int,
                test: ColoredDataset | None = None, history: DIBHistory | None = None) -> None:
    """Per batch: decoder on distortion, public encoder on distortion + alpha * log ratio, discriminator.

    Distortion is the per-image sum of squared errors; the discriminator takes
    ``dis_steps`` steps per batch so its log odds track the moving encoder.
    """
    history = history if history is not None else DIBHistory()
    bundle.enc_s.freeze()
    spec = ChannelSpec(config.snr_ab_db, config.normalize)
    betas = (config.adam_beta1, config.adam_beta2)
    dec_params = bundle.dec.parameters()
    enc_params = bundle.enc_t.parameters()
    dis_params = bundle.dis.parameters()
    opt_dec = Adam(dec_params, lr=config.lr, betas=betas)
    opt_enc = Adam(enc_params, lr=config.lr, betas=betas)
    opt_dis = Adam(dis_params, lr=config.lr, betas=betas)
    shuf = seeding.stream(config.seed, "shuffle", 2)
    pair_rng = seeding.stream(config.seed, "shuffle", 3)
    noise = seeding.stream(config.seed, "channel_ab", 2)
    # the private encoder is frozen, so its codes are fixed for the whole stage
    y_s_all = bundle.enc_s.predict(train.pixels)
    for epoch in range(1, epochs + 1):
        sums = np.zeros(4)
        n = 0
        for x, _, idx in batch_iter(train, config.batch_size, shuf):
            if len(x) < 2:
                continue
            y_s = Tensor(y_s_all[idx])
            with Tape() as tape:
                y_t = bundle.enc_t(x)
                x_hat = bundle.dec(transmit(ag.concat([y_t, y_s], axis=1), spec, noise))
                d = sse(x_hat, x)
                ratio = density_ratio_mi(y_t, y_s, bundle.dis)
                loss_a = d + config.alpha * ratio
            # ratio does not depend on the decoder, so one sweep of L_A yields both
            # dL_B/d(theta_B) and dL_A/d(phi_t)
            grads = tape.gradient(loss_a, dec_params + enc_params)
            opt_dec.step(grads[:len(dec_params)])
            opt_enc.step(grads[len(dec_params):])

            yt_det = y_t.data
            for _ in range(config.dis_steps):
                yt_sh, ys_sh = shuffle_pairs(yt_det, y_s.data, pair_rng)
                with Tape() as tape:
                    l_dis = discriminator_loss(yt_det, y_s.data, yt_sh, ys_sh, bundle.dis)
                opt_dis.step(tape.gradient(l_dis, dis_params))

            B = len(x)
            sums += B * np.array([d.item(), loss_a.item(), l_dis.item(), ratio.item()])
            n += B
        row = {"stage": 2, "epoch": epoch, "L_B": sums[0] / n, "L_A": sums[1] / n,
               "L_dis": sums[2] / n, "mi_est": sums[3] / n}
        if test is not None:
            row["test_mse"] = test_mse(bundle, test, spec, seeding.stream(config.seed, "eval", epoch))
        history.rows.append(row)


def train_dib(train: ColoredDataset, config, test: ColoredDataset | None = None,
              bundle: ModelBundle | None = None) -> tuple[ModelBundle, DIBHistory]:
    """Two-step training; returns the bundle (enc_s, cls, enc_t, dec, dis) and per-epoch history."""
    require(config, DIB_FIELDS)
    if bundle is None:
        bundle = ModelBundle(config.m_s, config.m_t)
        bundle.build(["enc_s", "cls", "enc_t", "dec", "dis"], seeding.stream(config.seed, "init"))
    history = DIBHistory()
    t0 = time.perf_counter()
    train_step1(bundle, train, config, config.v_d1, test, history)
    t1 = time.perf_counter()
    train_step2(bundle, train, config, config.v_d2, test, history)
    history.seconds = {"step1": t1 - t0, "step2": time.perf_counter() - t1}
    return bundle, history
