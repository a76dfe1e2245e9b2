"""Command-line pipeline: data preparation, the two training stages, baselines, evaluation and export.

Every stage writes under ``output_dir/{checkpoints,metrics,images}`` and then
refreshes ``manifest.json``. Exit codes: 0 success, 2 configuration error,
3 missing prerequisite, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import __version__, seeding
from .bundle import COMPONENTS, ModelBundle
from .config import ConfigError, ExperimentConfig, load_config
from .data import Splits, load_colored_splits
from .dib import DIBHistory, train_dib
from .evaluate import (BASELINES, BaselineResult, baseline_probe_accuracy, export_codewords, image_grid,
                       password_sweep, pixel_mse, probe_accuracy, psnr_from_mse, reconstruct, run_baseline,
                       seed_average, snr_sweep, write_ppm)
from .nn.checkpoint import FORMAT_VERSION, atomic_write_bytes, load_params
from .pp import PPHistory, freeze_encoders, train_pp
from .records import write_csv

OUTPUT_ROOT_ENV = "DIBJSCC_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_RUNTIME = 0, 2, 3, 4

TABLE1_SNRS = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
PSNR_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
PASSWORD_GRID = ((4, 4), (16, 128))

DIB_CKPT = "dib.ckpt"
PP_CKPT = "pp.ckpt"


class PrerequisiteError(RuntimeError):
    pass


class LockedError(RuntimeError):
    pass


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(bundle: ModelBundle, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    bundle.save(path)


def load_checkpoint(path, m_s: int, m_t: int, len_: int = 16) -> ModelBundle:
    """Rebuild the components present in ``path`` and load them bit-exactly."""
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"checkpoint {path} not found")
    names = sorted({k.split(".", 1)[0] for k in load_params(path)})
    unknown = [n for n in names if n not in COMPONENTS]
    if unknown:
        raise ValueError(f"checkpoint {path} holds unknown component {unknown[0]!r}")
    bundle = ModelBundle(m_s, m_t)
    bundle.build(names, np.random.default_rng(0), len_=len_)
    bundle.load(path, names)
    return bundle


# ---------------------------------------------------------------- run directory


class RunDir:
    def __init__(self, config: ExperimentConfig):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(config.output_dir)
        self.path = Path(root) / out if root and not out.is_absolute() else out
        self.config = config

    def sub(self, kind: str, name: str) -> Path:
        d = self.path / kind
        d.mkdir(parents=True, exist_ok=True)
        return d / name

    def checkpoint(self, name: str) -> Path:
        return self.path / "checkpoints" / name

    @contextmanager
    def lock(self):
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockedError(f"{self.path} is locked by another run (remove {lock} if it is stale)")
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock.unlink(missing_ok=True)

    def write_manifest(self, stage: str, seconds: float, artifacts: list[Path]) -> Path:
        """Merge this stage into manifest.json; listed files must exist."""
        path = self.path / "manifest.json"
        doc = json.loads(path.read_text()) if path.exists() else {"stages": {}}
        rel = sorted(str(p.relative_to(self.path)) for p in artifacts if p.exists())
        doc["stages"][stage] = {"seconds": round(seconds, 3), "artifacts": rel,
                                "config_hash": self.config.hash(), **STAGE_NOTES.get(stage, {})}
        doc["config_hash"] = self.config.hash()
        doc["versions"] = {"dibjscc": __version__, "numpy": np.__version__,
                           "python": platform.python_version(), "checkpoint_format": FORMAT_VERSION}
        everything = {a for s in doc["stages"].values() for a in s["artifacts"]}
        doc["artifacts"] = sorted(a for a in everything if (self.path / a).exists())
        atomic_write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
        return path


# choices that are fixed in code but worth seeing next to the run outputs
STAGE_NOTES = {"train-pp": {"decoder_init": "warm_start_from_dib"}}


def guard_overwrite(paths: list[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(f"{existing[0]} already exists; pass --force to overwrite")


def load_data(config: ExperimentConfig) -> Splits:
    for name in ("train_images", "train_labels", "test_images", "test_labels"):
        if not Path(getattr(config, name)).exists():
            raise PrerequisiteError(f"{name} file {getattr(config, name)} not found; "
                                    "place the MNIST IDX files there or set it in the config")
    return load_colored_splits(config.train_images, config.train_labels, config.test_images,
                               config.test_labels, config.train_limit, config.test_limit,
                               seeding.stream(config.seed, "data_train"),
                               seeding.stream(config.seed, "data_test"))


def load_stage(run: RunDir, name: str, stage: str) -> ModelBundle:
    path = run.checkpoint(name)
    if not path.exists():
        raise PrerequisiteError(f"{path} not found; run `dibjscc {stage}` first")
    c = run.config
    return load_checkpoint(path, c.m_s, c.m_t, c.len)


def load_baseline(run: RunDir, mode: str) -> BaselineResult:
    path = run.checkpoint(f"baseline_{mode}.ckpt")
    if not path.exists():
        raise PrerequisiteError(f"{path} not found; run `dibjscc train-baseline --mode {mode}` first")
    c = run.config
    if mode == "B_private_discard":
        return BaselineResult(mode, load_checkpoint(path, c.m_s, c.m_t), [], zero_private=True)
    bundle = load_checkpoint(path, 0, c.m_s + c.m_t)
    return BaselineResult(mode, bundle, [], discard=c.m_s if mode == "A_random_discard" else 0)


# ---------------------------------------------------------------- stages


def cmd_prepare_data(run: RunDir, args) -> list[Path]:
    sp = load_data(run.config)
    out = run.sub("metrics", "data_summary.csv")
    guard_overwrite([out], args.force)
    rows = []
    for split, ds in (("train", sp.train), ("test", sp.test)):
        row = {"split": split, "n": len(ds)}
        row.update({f"color_{k}": int(v) for k, v in enumerate(np.bincount(ds.colors, minlength=10))})
        rows.append(row)
    write_csv(out, rows, list(rows[0]), run.config.hash())
    grid = run.sub("images", "samples.ppm")
    write_ppm(grid, image_grid(sp.test.pixels[:16], sp.test.pixels[16:32]))
    return [out, grid]


def cmd_train_dib(run: RunDir, args) -> list[Path]:
    ckpt, hist_path = run.checkpoint(DIB_CKPT), run.sub("metrics", "dib_history.csv")
    guard_overwrite([ckpt, hist_path], args.force)
    sp = load_data(run.config)
    bundle, history = train_dib(sp.train, run.config, test=sp.test)
    save_checkpoint(bundle, ckpt)
    write_csv(hist_path, history.rows, DIBHistory.COLUMNS, run.config.hash())
    return [ckpt, hist_path]


def cmd_train_pp(run: RunDir, args) -> list[Path]:
    ckpt, hist_path = run.checkpoint(PP_CKPT), run.sub("metrics", "pp_history.csv")
    guard_overwrite([ckpt, hist_path], args.force)
    bundle = freeze_encoders(load_stage(run, DIB_CKPT, "train-dib"))
    sp = load_data(run.config)
    bundle, history = train_pp(sp.train, bundle, run.config, test=sp.test)
    save_checkpoint(bundle, ckpt)
    write_csv(hist_path, history.rows, PPHistory.COLUMNS, run.config.hash())
    return [ckpt, hist_path]


def cmd_train_baseline(run: RunDir, args) -> list[Path]:
    mode = args.mode
    ckpt = run.checkpoint(f"baseline_{mode}.ckpt")
    hist_path = run.sub("metrics", f"baseline_{mode}_history.csv")
    guard_overwrite([ckpt, hist_path], args.force)
    dib = load_stage(run, DIB_CKPT, "train-dib") if mode == "B_private_discard" else None
    sp = load_data(run.config)
    result = run_baseline(mode, sp.train, run.config, dib_bundle=dib, test=sp.test)
    save_checkpoint(result.bundle, ckpt)
    write_csv(hist_path, result.history, ["epoch", "L_B"], run.config.hash())
    return [ckpt, hist_path]


def _mse_row(x: np.ndarray, x_hat: np.ndarray) -> dict:
    pm = pixel_mse(x, x_hat)
    return {"test_mse": float(np.mean((x_hat.astype(np.float64) - x) ** 2)), "pixel_mse": pm,
            "psnr": psnr_from_mse(pm)}


def cmd_eval(run: RunDir, args) -> list[Path]:
    c = run.config
    bundle = load_stage(run, PP_CKPT, "train-pp")
    sp = load_data(c)
    if args.table1:
        out = run.sub("metrics", "table1.csv")
        guard_overwrite([out], args.force)
        baselines = {m: load_baseline(run, m) for m in BASELINES
                     if run.checkpoint(f"baseline_{m}.ckpt").exists()}
        rows = []
        for k, snr in enumerate(TABLE1_SNRS):
            row = {"snr_ae_db": snr,
                   "dib_ppjscc": probe_accuracy(bundle, sp.train, sp.test, "protected", snr, c, (6000 + k,)),
                   "unprotected": probe_accuracy(bundle, sp.train, sp.test, "unprotected", snr, c, (6100 + k,))}
            for mode, res in baselines.items():
                row[mode] = baseline_probe_accuracy(res, sp.train, sp.test, snr, c, (6200 + k,))
            rows.append(row)
        write_csv(out, rows, list(rows[0]), c.hash())
        return [out]
    out = run.sub("metrics", "eval.csv")
    guard_overwrite([out], args.force)
    rng = seeding.stream(c.seed, "eval", 7000)
    row = {"snr_ab_db": c.snr_ab_db, "snr_ae_db": c.snr_ae_db}
    row.update(_mse_row(sp.test.pixels, reconstruct(bundle, sp.test, c.snr_ab_db, c, rng, protected=True)))
    unprot = reconstruct(bundle, sp.test, c.snr_ab_db, c, seeding.stream(c.seed, "eval", 7001), protected=False)
    row["dib_test_mse"] = float(np.mean((unprot.astype(np.float64) - sp.test.pixels) ** 2))
    for i, view in enumerate(("protected", "unprotected", "public_only", "guess")):
        row[f"eve_{view}"] = probe_accuracy(bundle, sp.train, sp.test, view, c.snr_ae_db, c, (7100 + i,))
    write_csv(out, [row], list(row), c.hash())
    return [out]


def cmd_sweep(run: RunDir, args) -> list[Path]:
    c = run.config
    sp = load_data(c)
    stem = run.sub("metrics", f"sweep_{args.kind}")
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    guard_overwrite([csv_path, json_path], args.force)
    if args.kind == "psnr":
        bundle = load_stage(run, PP_CKPT, "train-pp")
        result = snr_sweep(bundle, c, PSNR_SNRS, "psnr", sp.test)
    elif args.kind == "eve":
        bundle = load_stage(run, PP_CKPT, "train-pp")
        result = snr_sweep(bundle, c, TABLE1_SNRS, "eve_accuracy", sp.test, train=sp.train)
    else:
        dib = freeze_encoders(load_stage(run, DIB_CKPT, "train-dib"))
        seeds = [c.seed + i for i in range(args.seeds)]
        result = password_sweep(dib, c, PASSWORD_GRID, seeds, sp.train, sp.test)
        result.metadata["seed_average"] = seed_average(result)
    result.to_csv(csv_path)
    result.to_json(json_path)
    return [csv_path, json_path]


def cmd_export(run: RunDir, args) -> list[Path]:
    c = run.config
    name = PP_CKPT if run.checkpoint(PP_CKPT).exists() else DIB_CKPT
    bundle = load_stage(run, name, "train-dib")
    protected = bundle.has("encryptor")
    sp = load_data(c)
    test = sp.test.subset(np.arange(min(args.count, len(sp.test))))
    codes = run.sub("metrics", "codewords.csv")
    grid = run.sub("images", "reconstructions.ppm")
    guard_overwrite([codes, grid], args.force)
    export_codewords(bundle, test, codes, c, protected=protected)
    x_hat = reconstruct(bundle, test, c.snr_ab_db, c, seeding.stream(c.seed, "eval", 8000), protected=protected)
    write_ppm(grid, image_grid(test.pixels[:32], x_hat[:32]))
    return [codes, grid]


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "train-dib": cmd_train_dib,
    "train-pp": cmd_train_pp,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export": cmd_export,
}


# ---------------------------------------------------------------- argument handling


def _parse_set(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    return key.strip(), yaml.safe_load(raw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--force", action="store_true", help="overwrite this stage's existing outputs")

    ap = argparse.ArgumentParser(prog="dibjscc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "train-baseline":
            p.add_argument("--mode", choices=BASELINES, required=True)
        elif name == "eval":
            p.add_argument("--table1", action="store_true",
                           help="eavesdropper accuracy per SNR_AE in -15..15 dB for every trained method")
        elif name == "sweep":
            p.add_argument("--kind", choices=("psnr", "eve", "password"), required=True)
            p.add_argument("--seeds", type=int, default=3, help="seeds per password cell")
        elif name == "export":
            p.add_argument("--count", type=int, default=256, help="test samples to export")
    return ap


def resolve_config(args) -> ExperimentConfig:
    overrides = dict(_parse_set(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        run = RunDir(config)
        with run.lock():
            t0 = time.perf_counter()
            artifacts = COMMANDS[args.command](run, args)
            manifest = run.write_manifest(args.command, time.perf_counter() - t0, artifacts)
    except ConfigError as exc:
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"config error: {exc}{field}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except Exception as exc:  # noqa: BLE001 - every other failure maps to one exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for a in artifacts:
        print(a)
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
