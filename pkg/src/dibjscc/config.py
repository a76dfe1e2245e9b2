"""Experiment configuration: defaults, validation, YAML round-trip and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .channel import parse_snr


class ConfigError(ValueError):
    """Invalid or unparsable configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    train_images: str = "data/mnist/train-images-idx3-ubyte.gz"
    train_labels: str = "data/mnist/train-labels-idx1-ubyte.gz"
    test_images: str = "data/mnist/t10k-images-idx3-ubyte.gz"
    test_labels: str = "data/mnist/t10k-labels-idx1-ubyte.gz"
    train_limit: int | None = 10000
    test_limit: int | None = 2000
    # model
    m_s: int = 16
    m_t: int = 48
    # disentangling stage
    alpha: float = 1.0
    v_d1: int = 30
    v_d2: int = 50
    dis_steps: int = 5
    # protection stage; entropy weights are relative to the per-image
    # squared-error distortion on [0, 1] pixels
    alpha1: float = 50.0
    beta1: float = 50.0
    p_level: int = 128
    len: int = 16
    v_p: int = 50
    # channel
    snr_ab_db: float = 30.0
    snr_ae_db: float = 15.0
    normalize: str = "unit_average_power"
    # optimizer
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 64
    # evaluation and baselines
    probe_epochs: int = 5
    finetune_epochs: int = 50
    # run
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("snr_ab_db", "snr_ae_db"):
            try:
                object.__setattr__(self, name, parse_snr(getattr(self, name)))
            except (TypeError, ValueError):
                raise ConfigError(f"{name}: expected a number or 'inf', got {getattr(self, name)!r}", name)
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, name: str, what: str):
            if not ok:
                raise ConfigError(f"{name}: {what}, got {getattr(self, name)!r}", name)

        for name in ("v_d1", "v_d2", "v_p", "probe_epochs", "finetune_epochs", "dis_steps"):
            need(_is_int(getattr(self, name)) and getattr(self, name) >= 1, name, "must be an integer >= 1")
        for name in ("m_s", "m_t", "len", "batch_size"):
            need(_is_int(getattr(self, name)) and getattr(self, name) >= 1, name, "must be an integer >= 1")
        need(_is_int(self.p_level) and self.p_level >= 2, "p_level", "must be an integer >= 2")
        for name in ("train_limit", "test_limit"):
            v = getattr(self, name)
            need(v is None or (_is_int(v) and v >= 1), name, "must be null or an integer >= 1")
        for name in ("alpha", "alpha1", "beta1"):
            v = getattr(self, name)
            need(_is_real(v) and v >= 0, name, "must be a non-negative number")
        need(_is_real(self.lr) and self.lr > 0, "lr", "must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            need(_is_real(v) and 0 < v < 1, name, "must lie in (0, 1)")
        need(self.normalize in ("unit_average_power", "none"), "normalize",
             "must be 'unit_average_power' or 'none'")
        need(_is_int(self.seed) and self.seed >= 0, "seed", "must be a non-negative integer")
        for name in ("snr_ab_db", "snr_ae_db"):
            need(not math.isnan(getattr(self, name)) and getattr(self, name) > -math.inf, name, "must be finite or inf")

    # serialization

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for name in ("snr_ab_db", "snr_ae_db"):
            if math.isinf(d[name]):
                d[name] = "inf"
        return d

    def hash(self) -> str:
        """Short digest of every field except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}", unknown[0])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_config_text(text: str, source: str = "<string>") -> dict[str, Any]:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{source}: parse error at {where}: {getattr(exc, 'problem', exc)}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a key/value mapping, got {type(data).__name__}")
    return data


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then file values, then ``overrides`` (later wins)."""
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data.update(parse_config_text(path.read_text(), str(path)))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def require(config, names) -> None:
    """Raise ConfigError if ``config`` lacks any of ``names`` (for duck-typed configs)."""
    for name in names:
        if getattr(config, name, None) is None:
            raise ConfigError(f"config is missing required field {name!r}", name)
