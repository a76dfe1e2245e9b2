"""Password-conditioned protection of the private subcodeword.

Alice encrypts ``y_s`` with a per-sample password through a single dense
layer; Bob, who shares the password, decrypts before decoding. Two adversarial
eavesdroppers are trained alongside: one classifies the protected codeword
directly, the other first decrypts it with a randomly guessed password.
Bob's side is trained to reconstruct well while pushing both eavesdroppers'
predictions toward maximum entropy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .bundle import ModelBundle
from .channel import ChannelSpec, draw_noise, transmit
from .config import require
from .data import ColoredDataset, batch_iter
from .nn import autograd as ag
from .nn.autograd import ContractError, Tape, Tensor
from .nn.layers import Dense
from .nn.losses import accuracy, cross_entropy_nll, entropy, mse, sse
from .nn.optim import Adam

PP_FIELDS = ("alpha1", "beta1", "p_level", "len", "v_p", "snr_ab_db", "snr_ae_db", "batch_size", "seed",
             "lr", "adam_beta1", "adam_beta2", "normalize")
BOB_SIDE = ("dec", "encryptor", "decryptor")
EVE_SIDE = ("eve", "eve_bar")


@dataclass(frozen=True)
class PasswordSpec:
    length: int = 16
    p_level: int = 128

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ValueError(f"password length must be an integer >= 1, got {self.length}")
        if int(self.p_level) != self.p_level or self.p_level < 2:
            raise ValueError(f"p_level must be an integer >= 2, got {self.p_level}")


def sample_password(rng: np.random.Generator, spec: PasswordSpec, batch: int | None = None) -> np.ndarray:
    """I.i.d. uniform integers in ``1..p_level``; shape ``[Len]`` or ``[batch, Len]``."""
    shape = (spec.length,) if batch is None else (batch, spec.length)
    return rng.integers(1, spec.p_level + 1, size=shape)


def password_embed(p, spec: PasswordSpec) -> np.ndarray:
    p = np.asarray(p)
    if p.shape[-1] != spec.length:
        raise ag.ShapeError(f"password length {p.shape[-1]} != spec length {spec.length}")
    if np.any(p < 1) or np.any(p > spec.p_level):
        raise ValueError(f"password entries must lie in 1..{spec.p_level}")
    return (p / spec.p_level).astype(np.float32)


def password_entropy(spec: PasswordSpec) -> float:
    """Bits in a uniformly drawn password: ``Len * log2(p_level)``."""
    return spec.length * math.log2(spec.p_level)


def _keyed(layer: Dense, y, p, spec: PasswordSpec) -> Tensor:
    y = ag.as_tensor(y)
    e = password_embed(p, spec)
    if e.ndim == 1:
        e = np.broadcast_to(e, (y.shape[0], spec.length))
    if e.shape[0] != y.shape[0]:
        raise ag.ShapeError(f"{y.shape[0]} codewords but {e.shape[0]} passwords")
    return layer(ag.concat([y, Tensor(np.ascontiguousarray(e))], axis=1))


def encrypt(y_s, p, enc: Dense, spec: PasswordSpec) -> Tensor:
    """Protected private subcodeword ``T(concat[y_s, p / p_level])``."""
    return _keyed(enc, y_s, p, spec)


def decrypt(y_s_noisy, p, dec: Dense, spec: PasswordSpec) -> Tensor:
    return _keyed(dec, y_s_noisy, p, spec)


def freeze_encoders(bundle: ModelBundle) -> ModelBundle:
    bundle.enc_t.freeze()
    bundle.enc_s.freeze()
    return bundle


def check_frozen(bundle: ModelBundle) -> None:
    for name in ("enc_t", "enc_s"):
        if not bundle.nets[name].frozen:
            raise ContractError(f"{name} must be frozen during protection training")


def split(y: Tensor, m_t: int) -> tuple[Tensor, Tensor]:
    return ag.getitem(y, (slice(None), slice(0, m_t))), ag.getitem(y, (slice(None), slice(m_t, None)))


def protect(bundle: ModelBundle, y_t, y_s, p, spec: PasswordSpec) -> Tensor:
    """The transmitted protected codeword ``concat[y_t, encrypt(y_s, p)]``."""
    return ag.concat([ag.as_tensor(y_t), encrypt(y_s, p, bundle.encryptor, spec)], axis=1)


def bob_decode(bundle: ModelBundle, y_hat, p, spec: PasswordSpec) -> Tensor:
    """Reconstruction from a received protected codeword with the right password."""
    y_t_hat, y_s_hat = split(ag.as_tensor(y_hat), bundle.m_t)
    return bundle.dec(ag.concat([y_t_hat, decrypt(y_s_hat, p, bundle.decryptor, spec)], axis=1))


def eve_guess_view(bundle: ModelBundle, y_hat, p1, spec: PasswordSpec) -> Tensor:
    """What the guessing eavesdropper classifies: public part plus a wrong-password decryption."""
    y_t_hat, y_s_hat = split(ag.as_tensor(y_hat), bundle.m_t)
    return ag.concat([y_t_hat, decrypt(y_s_hat, p1, bundle.decryptor, spec)], axis=1)


@dataclass
class PPLosses:
    L_B: Tensor
    L_T: Tensor
    L_E: Tensor
    eve_probs: Tensor
    eve_bar_probs: Tensor


def pp_losses(x, s, p, p1, bundle: ModelBundle, config, ab: ChannelSpec, ae: ChannelSpec,
              rng_ab: np.random.Generator | None = None, rng_ae: np.random.Generator | None = None,
              codes=None, noise_ab=None, noise_ae=None) -> PPLosses:
    """All three objectives from one forward pass.

    ``codes`` may carry precomputed ``(y_t, y_s)``; the encoders are frozen so
    they are constants either way.
    """
    check_frozen(bundle)
    spec = PasswordSpec(config.len, config.p_level)
    y_t, y_s = codes if codes is not None else (bundle.enc_t(x), bundle.enc_s(x))
    y_p = protect(bundle, y_t, y_s, p, spec)
    x_hat = bob_decode(bundle, transmit(y_p, ab, rng_ab, noise_ab), p, spec)
    d = sse(x_hat, x)
    y_e = transmit(y_p, ae, rng_ae, noise_ae)
    eve_probs = bundle.eve(y_e)
    bar_probs = bundle.eve_bar(eve_guess_view(bundle, y_e, p1, spec))
    L_T = d - config.alpha1 * entropy(eve_probs) - config.beta1 * entropy(bar_probs)
    L_E = cross_entropy_nll(eve_probs, s) + cross_entropy_nll(bar_probs, s)
    return PPLosses(d, L_T, L_E, eve_probs, bar_probs)


@dataclass
class PPHistory:
    rows: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    # sequence of "eve"/"bob" tags, one per optimizer step, for ordering checks
    update_log: list[str] = field(default_factory=list)

    COLUMNS = ("epoch", "L_B", "L_T", "L_E", "eve_acc_protected", "eve_acc_guess", "test_mse")


def build_pp(bundle: ModelBundle, config, rng: np.random.Generator) -> ModelBundle:
    """Add encryptor, decryptor and the two eavesdroppers; the decoder is kept (warm start)."""
    bundle.build(["encryptor", "decryptor", *EVE_SIDE], rng, len_=config.len)
    return bundle


def pp_test_metrics(bundle: ModelBundle, data: ColoredDataset, config, seed_offset: int,
                    batch_size: int = 1000) -> dict[str, float]:
    """Test MSE at Bob and accuracy of the two trained eavesdroppers."""
    spec = PasswordSpec(config.len, config.p_level)
    ab = ChannelSpec(config.snr_ab_db, config.normalize)
    ae = ChannelSpec(config.snr_ae_db, config.normalize)
    rng = seeding.stream(config.seed, "eval", 1000 + seed_offset)
    sq, hits, hits_bar, n = 0.0, 0, 0, 0
    for lo in range(0, len(data), batch_size):
        x = data.pixels[lo:lo + batch_size]
        B = len(x)
        p = sample_password(rng, spec, B)
        p1 = sample_password(rng, spec, B)
        y_p = protect(bundle, bundle.enc_t(x), bundle.enc_s(x), p, spec)
        x_hat = bob_decode(bundle, transmit(y_p, ab, rng), p, spec)
        sq += float(mse(x_hat, x).data) * B
        y_e = transmit(y_p, ae, rng)
        labels = data.colors[lo:lo + B]
        hits += accuracy(bundle.eve(y_e), labels) * B
        hits_bar += accuracy(bundle.eve_bar(eve_guess_view(bundle, y_e, p1, spec)), labels) * B
        n += B
    return {"test_mse": sq / n, "eve_acc_protected": hits / n, "eve_acc_guess": hits_bar / n}


def train_pp(train: ColoredDataset, bundle: ModelBundle, config, test: ColoredDataset | None = None,
             epochs: int | None = None) -> tuple[ModelBundle, PPHistory]:
    """Alternate, per batch, one eavesdropper update on L_E then one Bob-side update on L_B + L_T."""
    require(config, PP_FIELDS)
    check_frozen(bundle)
    if not bundle.has("encryptor"):
        build_pp(bundle, config, seeding.stream(config.seed, "init", 2))
    spec = PasswordSpec(config.len, config.p_level)
    ab = ChannelSpec(config.snr_ab_db, config.normalize)
    ae = ChannelSpec(config.snr_ae_db, config.normalize)
    betas = (config.adam_beta1, config.adam_beta2)
    eve_params = bundle.component_parameters(*EVE_SIDE)
    bob_params = bundle.component_parameters(*BOB_SIDE)
    opt_eve = Adam(eve_params, lr=config.lr, betas=betas)
    opt_bob = Adam(bob_params, lr=config.lr, betas=betas)
    shuf = seeding.stream(config.seed, "shuffle", 4)
    pw_rng = seeding.stream(config.seed, "passwords")
    guess_rng = seeding.stream(config.seed, "guesses")
    rng_ab = seeding.stream(config.seed, "channel_ab", 4)
    rng_ae = seeding.stream(config.seed, "channel_ae", 4)
    y_t_all = bundle.enc_t.predict(train.pixels)
    y_s_all = bundle.enc_s.predict(train.pixels)
    history = PPHistory()
    t0 = time.perf_counter()
    for epoch in range(1, (epochs or config.v_p) + 1):
        sums = np.zeros(3)
        n = 0
        for x, s, idx in batch_iter(train, config.batch_size, shuf):
            B = len(x)
            p = sample_password(pw_rng, spec, B)
            p1 = sample_password(guess_rng, spec, B)
            codes = (Tensor(y_t_all[idx]), Tensor(y_s_all[idx]))
            noise_ab = draw_noise((B, bundle.m), ab, rng_ab)
            noise_ae = draw_noise((B, bundle.m), ae, rng_ae)

            # eavesdroppers first, on the current protected codewords
            with Tape() as tape:
                losses = pp_losses(x, s, p, p1, bundle, config, ab, ae, codes=codes,
                                   noise_ab=noise_ab, noise_ae=noise_ae)
            opt_eve.step(tape.gradient(losses.L_E, eve_params))
            history.update_log.append("eve")

            # then Bob's side against the updated eavesdroppers; entropy terms
            # only reach Bob-side parameters
            with Tape() as tape:
                losses = pp_losses(x, s, p, p1, bundle, config, ab, ae, codes=codes,
                                   noise_ab=noise_ab, noise_ae=noise_ae)
                objective = losses.L_B + losses.L_T
            opt_bob.step(tape.gradient(objective, bob_params))
            history.update_log.append("bob")

            sums += B * np.array([losses.L_B.item(), losses.L_T.item(), losses.L_E.item()])
            n += B
        row = {"epoch": epoch, "L_B": sums[0] / n, "L_T": sums[1] / n, "L_E": sums[2] / n}
        if test is not None:
            row.update(pp_test_metrics(bundle, test, config, epoch))
        history.rows.append(row)
    history.seconds = time.perf_counter() - t0
    return bundle, history
