"""Metrics, codeword views, sweeps, baselines and exports."""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import seeding
from .bundle import ModelBundle
from .channel import ChannelSpec, transmit
from .data import ColoredDataset, batch_iter, images_to_uint8
from .dib import encode_numpy, train_dib
from .nn import autograd as ag
from .nn.autograd import Tape
from .nn.checkpoint import atomic_write_bytes
from .nn.losses import accuracy, cross_entropy_nll, entropy, sse
from .nn.optim import Adam
from .pp import PasswordSpec, bob_decode, eve_guess_view, protect, sample_password, train_pp
from .probe import train_probe
from .records import write_csv, write_json

# ---------------------------------------------------------------- pixel metrics


def quantize(x: np.ndarray, n: int = 8) -> np.ndarray:
    """Scale [0, 1] values to integers in [0, 2^n - 1] by multiply-and-round."""
    peak = 2 ** n - 1
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * peak), 0, peak)


def pixel_mse(x: np.ndarray, x_hat: np.ndarray, n: int = 8) -> float:
    """MSE between the rounded integer images."""
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ag.ShapeError(f"pixel_mse: shapes {x.shape} and {x_hat.shape} differ")
    diff = quantize(x, n) - quantize(x_hat, n)
    return float(np.mean(diff * diff))


def psnr_from_mse(m: float, n: int = 8) -> float:
    """``10 log10((2^n - 1)^2 / mse)``; ``inf`` when the error is zero."""
    if m < 0:
        raise ValueError("mse must be non-negative")
    if m == 0:
        return math.inf
    return 10.0 * math.log10((2 ** n - 1) ** 2 / m)


def psnr(x: np.ndarray, x_hat: np.ndarray, n: int = 8) -> float:
    """PSNR of [0, 1] images after the multiply-by-peak-and-round pipeline."""
    return psnr_from_mse(pixel_mse(x, x_hat, n), n)


# ---------------------------------------------------------------- codeword views

VIEWS = ("public_clean", "private_clean", "unprotected", "protected", "public_only", "guess")


@dataclass
class ViewSet:
    codes: np.ndarray
    labels: np.ndarray


def codeword_view(bundle: ModelBundle, data: ColoredDataset, view: str, snr_db: float, config,
                  rng: np.random.Generator, batch_size: int = 1000) -> np.ndarray:
    """What an observer sees for each sample of ``data``.

    ``public_clean`` / ``private_clean``: noiseless subcodewords.
    ``unprotected``: the plain codeword after the eavesdropper's link.
    ``protected``: the password-protected codeword after the link.
    ``public_only``: just the public half of the received protected codeword.
    ``guess``: public half plus the private half decrypted with a random guessed password.
    """
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}; choose from {VIEWS}")
    spec = ChannelSpec(snr_db, config.normalize)
    pw = PasswordSpec(config.len, config.p_level)
    out = []
    for lo in range(0, len(data), batch_size):
        x = data.pixels[lo:lo + batch_size]
        y_t, y_s = encode_numpy(bundle, x)
        if view == "public_clean":
            out.append(y_t)
            continue
        if view == "private_clean":
            out.append(y_s)
            continue
        if view == "unprotected":
            out.append(transmit(np.concatenate([y_t, y_s], axis=1), spec, rng).data)
            continue
        p = sample_password(rng, pw, len(x))
        y_e = transmit(protect(bundle, y_t, y_s, p, pw), spec, rng)
        if view == "protected":
            out.append(y_e.data)
        elif view == "public_only":
            out.append(y_e.data[:, :bundle.m_t])
        else:
            p1 = sample_password(rng, pw, len(x))
            out.append(eve_guess_view(bundle, y_e, p1, pw).data)
    return np.concatenate(out, axis=0)


def probe_accuracy(bundle: ModelBundle, train: ColoredDataset, test: ColoredDataset, view: str,
                   snr_db: float, config, seed_key: Sequence[int] = (), target: str = "color") -> float:
    """Train a fresh probe on ``view`` codewords of ``train`` and score it on ``test``."""
    rng = seeding.stream(config.seed, "probe", *seed_key)
    labels_tr = train.colors if target == "color" else train.digits
    labels_te = test.colors if target == "color" else test.digits
    tr = codeword_view(bundle, train, view, snr_db, config, rng)
    te = codeword_view(bundle, test, view, snr_db, config, rng)
    _, acc = train_probe(tr, labels_tr, te, labels_te, rng, epochs=config.probe_epochs)
    return acc


def eavesdrop_accuracy(eve_net, bundle: ModelBundle, data: ColoredDataset, view: str, snr_ae_db: float,
                       config, rng: np.random.Generator) -> float:
    """Accuracy of an already trained eavesdropper network on the chosen view."""
    if len(data) == 0:
        raise ValueError("eavesdrop_accuracy on an empty dataset")
    codes = codeword_view(bundle, data, view, snr_ae_db, config, rng)
    return accuracy(eve_net.predict(codes), data.colors)


def reconstruct(bundle: ModelBundle, data: ColoredDataset, snr_ab_db: float, config,
                rng: np.random.Generator, protected: bool | None = None,
                zero_private: bool = False, discard: int = 0, batch_size: int = 1000) -> np.ndarray:
    """Bob's reconstructions of ``data`` through the legitimate link.

    ``zero_private`` transmits ``y_s = 0``; ``discard`` zeroes that many random
    codeword entries per batch (the random-discard baseline).
    """
    spec = ChannelSpec(snr_ab_db, config.normalize)
    pw = PasswordSpec(config.len, config.p_level)
    protected = bundle.has("encryptor") if protected is None else protected
    outs = []
    for lo in range(0, len(data), batch_size):
        x = data.pixels[lo:lo + batch_size]
        if bundle.has("enc_s"):
            y_t, y_s = encode_numpy(bundle, x)
            if zero_private:
                y_s = np.zeros_like(y_s)
        else:
            y_t, y_s = bundle.enc_t.predict(x), np.zeros((len(x), 0), np.float32)
        if protected:
            p = sample_password(rng, pw, len(x))
            x_hat = bob_decode(bundle, transmit(protect(bundle, y_t, y_s, p, pw), spec, rng), p, pw)
        else:
            y = np.concatenate([y_t, y_s], axis=1)
            if discard:
                y = y.copy()
                y[:, rng.choice(y.shape[1], size=discard, replace=False)] = 0
            x_hat = bundle.dec(transmit(y, spec, rng))
        outs.append(x_hat.data)
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    axis_name: str
    axis: list
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.rows) != len(self.axis):
            raise ValueError(f"{len(self.axis)} axis values but {len(self.rows)} rows")

    def columns(self) -> list[str]:
        cols = [self.axis_name]
        for r in self.rows:
            cols += [k for k in r if k not in cols]
        return cols

    def to_csv(self, path) -> None:
        write_csv(path, self.rows, self.columns(), self.metadata.get("config_hash"))

    def to_json(self, path) -> None:
        write_json(path, {"axis": {"name": self.axis_name, "values": self.axis},
                          "rows": self.rows, "metadata": self.metadata})

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


def snr_sweep(bundle: ModelBundle, config, test_snrs: Sequence[float], target: str,
              test: ColoredDataset, train: ColoredDataset | None = None,
              view: str = "protected") -> SweepResult:
    """Evaluate ``psnr`` (legitimate link) or ``eve_accuracy`` (fresh probe) at each test SNR."""
    if len(test_snrs) == 0:
        raise ValueError("snr_sweep needs at least one SNR")
    rows = []
    for k, snr in enumerate(test_snrs):
        if target == "psnr":
            x_hat = reconstruct(bundle, test, snr, config, seeding.stream(config.seed, "eval", 2000 + k))
            m = pixel_mse(test.pixels, x_hat)
            rows.append({"snr_db": snr, "psnr": psnr_from_mse(m), "pixel_mse": m,
                         "mse": float(np.mean((x_hat.astype(np.float64) - test.pixels) ** 2))})
        elif target == "eve_accuracy":
            if train is None:
                raise ValueError("eve_accuracy sweeps need the training split for the probe")
            acc = probe_accuracy(bundle, train, test, view, snr, config, seed_key=(3000 + k,))
            row = {"snr_db": snr, "eve_accuracy": acc}
            if bundle.has("eve") and view == "protected":
                row["trained_eve_accuracy"] = eavesdrop_accuracy(
                    bundle.eve, bundle, test, view, snr, config, seeding.stream(config.seed, "eval", 4000 + k))
            rows.append(row)
        else:
            raise ValueError(f"unknown sweep target {target!r}")
    return SweepResult("snr_db", list(test_snrs), rows, {"target": target, "view": view,
                                                         "seed": config.seed, "config_hash": config.hash()})


def password_sweep(dib_bundle: ModelBundle, config, grid: Sequence[tuple[int, int]], seeds: Sequence[int],
                   train: ColoredDataset, test: ColoredDataset, epochs: int | None = None) -> SweepResult:
    """Protection training per (Len, p_level) cell and seed, warm-started from one DIB bundle.

    Reports fresh-probe accuracies on the unprotected codeword, the protected
    codeword, the public half only ("w/o p1") and the guessed-password view ("w/ p1").
    """
    if len(grid) == 0:
        raise ValueError("password_sweep needs a non-empty grid")
    rows, axis = [], []
    for ci, (length, level) in enumerate(grid):
        for seed in seeds:
            cfg = config.replace(len=int(length), p_level=int(level), seed=int(seed))
            bundle = copy.deepcopy(dib_bundle)
            for name in ("encryptor", "decryptor", "eve", "eve_bar"):
                bundle.nets[name] = None
            train_pp(train, bundle, cfg, epochs=epochs)
            snr = cfg.snr_ae_db
            row = {"cell": f"{length}x{level}", "len": length, "p_level": level, "seed": seed}
            for view, name in (("unprotected", "acc_unprotected"), ("protected", "acc_protected"),
                               ("public_only", "acc_without_p1"), ("guess", "acc_with_p1")):
                row[name] = probe_accuracy(bundle, train, test, view, snr, cfg, seed_key=(5000 + ci,))
            rows.append(row)
            axis.append(row["cell"])
    return SweepResult("cell", axis, rows, {"seeds": list(seeds), "config_hash": config.hash(),
                                            "snr_ae_db": config.snr_ae_db})


def seed_average(result: SweepResult, key: str = "cell") -> dict[str, dict[str, float]]:
    groups: dict[str, list[dict]] = {}
    for r in result.rows:
        groups.setdefault(r[key], []).append(r)
    out = {}
    for cell, rs in groups.items():
        out[cell] = {k: float(np.mean([r[k] for r in rs])) for k in rs[0]
                     if k.startswith("acc_")}
    return out


# ---------------------------------------------------------------- baselines

BASELINES = ("A_random_discard", "B_private_discard", "C_adversarial")


def _train_plain_jscc(train: ColoredDataset, config, eve_weight: float | None, test=None):
    """Encoder/decoder on distortion; with ``eve_weight`` an eavesdropper is trained adversarially."""
    bundle = ModelBundle(0, config.m_s + config.m_t)
    rng = seeding.stream(config.seed, "init", 7)
    bundle.build(["enc_t", "dec"] + (["eve"] if eve_weight is not None else []), rng)
    ab = ChannelSpec(config.snr_ab_db, config.normalize)
    ae = ChannelSpec(config.snr_ae_db, config.normalize)
    betas = (config.adam_beta1, config.adam_beta2)
    bob_params = bundle.component_parameters("enc_t", "dec")
    opt_bob = Adam(bob_params, lr=config.lr, betas=betas)
    if eve_weight is not None:
        eve_params = bundle.eve.parameters()
        opt_eve = Adam(eve_params, lr=config.lr, betas=betas)
    shuf = seeding.stream(config.seed, "shuffle", 7)
    noise = seeding.stream(config.seed, "channel_ab", 7)
    noise_e = seeding.stream(config.seed, "channel_ae", 7)
    history = []
    for epoch in range(1, config.v_d2 + 1):
        tot, n = 0.0, 0
        for x, s, _ in batch_iter(train, config.batch_size, shuf):
            if eve_weight is not None:
                y_e = transmit(bundle.enc_t.predict(x), ae, noise_e)
                with Tape() as tape:
                    l_e = cross_entropy_nll(bundle.eve(y_e), s)
                opt_eve.step(tape.gradient(l_e, eve_params))
            with Tape() as tape:
                y = bundle.enc_t(x)
                d = sse(bundle.dec(transmit(y, ab, noise)), x)
                loss = d
                if eve_weight is not None:
                    loss = d - eve_weight * entropy(bundle.eve(transmit(y, ae, noise_e)))
            opt_bob.step(tape.gradient(loss, bob_params))
            tot += d.item() * len(x)
            n += len(x)
        history.append({"epoch": epoch, "L_B": tot / n})
    return bundle, history


def finetune_decoder_zero_private(bundle: ModelBundle, train: ColoredDataset, config, epochs: int) -> list[dict]:
    """Retrain the decoder with the private subcodeword fixed to zero; encoders untouched."""
    spec = ChannelSpec(config.snr_ab_db, config.normalize)
    params = bundle.dec.parameters()
    opt = Adam(params, lr=config.lr, betas=(config.adam_beta1, config.adam_beta2))
    shuf = seeding.stream(config.seed, "shuffle", 8)
    noise = seeding.stream(config.seed, "channel_ab", 8)
    y_t_all = bundle.enc_t.predict(train.pixels)
    zeros = np.zeros((len(train), bundle.m_s), np.float32)
    history = []
    for epoch in range(1, epochs + 1):
        tot, n = 0.0, 0
        for x, _, idx in batch_iter(train, config.batch_size, shuf):
            y = np.concatenate([y_t_all[idx], zeros[idx]], axis=1)
            with Tape() as tape:
                d = sse(bundle.dec(transmit(y, spec, noise)), x)
            opt.step(tape.gradient(d, params))
            tot += d.item() * len(x)
            n += len(x)
        history.append({"epoch": epoch, "L_B": tot / n})
    return history


@dataclass
class BaselineResult:
    mode: str
    bundle: ModelBundle
    history: list[dict]
    zero_private: bool = False
    discard: int = 0

    def reconstruct(self, data, snr_ab_db, config, rng):
        return reconstruct(self.bundle, data, snr_ab_db, config, rng, protected=False,
                           zero_private=self.zero_private, discard=self.discard)

    def eve_view(self, data, snr_ae_db, config, rng) -> np.ndarray:
        """The codeword the eavesdropper receives under this baseline."""
        spec = ChannelSpec(snr_ae_db, config.normalize)
        if self.bundle.has("enc_s"):
            y_t, y_s = encode_numpy(self.bundle, data.pixels)
            if self.zero_private:
                y_s = np.zeros_like(y_s)
            y = np.concatenate([y_t, y_s], axis=1)
        else:
            y = self.bundle.enc_t.predict(data.pixels)
        out = []
        for lo in range(0, len(y), 1000):
            chunk = y[lo:lo + 1000].copy()
            if self.discard:
                chunk[:, rng.choice(chunk.shape[1], size=self.discard, replace=False)] = 0
            out.append(transmit(chunk, spec, rng).data)
        return np.concatenate(out, axis=0)


def run_baseline(mode: str, train: ColoredDataset, config, dib_bundle: ModelBundle | None = None,
                 test: ColoredDataset | None = None) -> BaselineResult:
    if mode not in BASELINES:
        raise ValueError(f"unknown baseline mode {mode!r}; choose from {BASELINES}")
    if mode == "A_random_discard":
        bundle, hist = _train_plain_jscc(train, config, None)
        return BaselineResult(mode, bundle, hist, discard=config.m_s)
    if mode == "C_adversarial":
        bundle, hist = _train_plain_jscc(train, config, config.alpha1)
        return BaselineResult(mode, bundle, hist)
    if dib_bundle is None:
        dib_bundle, _ = train_dib(train, config)
    bundle = copy.deepcopy(dib_bundle)
    for name in ("encryptor", "decryptor", "eve", "eve_bar"):
        bundle.nets[name] = None
    hist = finetune_decoder_zero_private(bundle, train, config, config.finetune_epochs)
    return BaselineResult(mode, bundle, hist, zero_private=True)


def baseline_probe_accuracy(result: BaselineResult, train, test, snr_ae_db, config, seed_key=()) -> float:
    rng = seeding.stream(config.seed, "probe", *seed_key)
    tr = result.eve_view(train, snr_ae_db, config, rng)
    te = result.eve_view(test, snr_ae_db, config, rng)
    return train_probe(tr, train.colors, te, test.colors, rng, epochs=config.probe_epochs)[1]


# ---------------------------------------------------------------- exports


def export_codewords(bundle: ModelBundle, data: ColoredDataset, path, config=None,
                     protected: bool = False, rng: np.random.Generator | None = None) -> None:
    """One CSV row per sample: public and private (or protected private) subcodewords and labels."""
    y_t, y_s = encode_numpy(bundle, data.pixels)
    if protected:
        pw = PasswordSpec(config.len, config.p_level)
        rng = rng if rng is not None else seeding.stream(config.seed, "passwords", 99)
        y_s = protect(bundle, y_t, y_s, sample_password(rng, pw, len(data)), pw).data[:, bundle.m_t:]
    cols = [f"yt_{i}" for i in range(y_t.shape[1])] + [f"ys_{i}" for i in range(y_s.shape[1])]
    lines = []
    if config is not None:
        lines.append(f"# config_hash={config.hash()}")
    lines.append(",".join(cols + ["color", "digit"]))
    for a, b, c, d in zip(y_t, y_s, data.colors, data.digits):
        vals = [f"{v:.9g}" for v in np.concatenate([a, b])]
        lines.append(",".join(vals + [str(int(c)), str(int(d))]))
    target = Path(path)
    if target.parent and not target.parent.exists():
        raise OSError(f"cannot write {path}: directory {target.parent} does not exist")
    atomic_write_bytes(target, ("\n".join(lines) + "\n").encode())


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) from a [H, W, 3] uint8 array."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ag.ShapeError(f"write_ppm expects [H, W, 3], got {image.shape}")
    h, w, _ = image.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + image.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    # header: four whitespace-separated tokens, then exactly one whitespace byte
    m = re.match(rb"(P6)\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if m is None:
        raise ValueError("not a binary PPM file")
    w, h = int(m.group(2)), int(m.group(3))
    return np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def image_grid(originals: np.ndarray, reconstructions: np.ndarray, columns: int = 8) -> np.ndarray:
    """Pairs of rows (originals above reconstructions) of 28x28 tiles, through the 8-bit pipeline."""
    a, b = images_to_uint8(originals), images_to_uint8(reconstructions)
    n = len(a)
    rows = math.ceil(n / columns)
    grid = np.zeros((rows * 2 * 28, columns * 28, 3), np.uint8)
    for i in range(n):
        r, c = divmod(i, columns)
        grid[2 * r * 28:(2 * r + 1) * 28, c * 28:(c + 1) * 28] = a[i]
        grid[(2 * r + 1) * 28:(2 * r + 2) * 28, c * 28:(c + 1) * 28] = b[i]
    return grid
