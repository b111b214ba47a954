"""Experiment configuration: flat ``key = value`` files, presets and overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

TASKS = ("copying", "adding", "mnist", "mnist-permuted")
MODELS = ("scornn", "lstm")

# Fraction of -1 entries in D, by task, used when rho is left unset.
DEFAULT_RHO_FRACTION = {
    "copying": 0.5,
    "adding": 0.5,
    "mnist": 0.1,
    "mnist-permuted": 0.5,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "copying"
    model: str = "scornn"
    n: int = 64
    rho: int = -1  # -1: task default
    T: int = 200
    batch_size: int = 128
    # non-recurrent parameters (U, V, c, modReLU bias; every LSTM parameter)
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    # recurrent skew parameters
    optimizer_rec: str = "rmsprop"
    lr_rec: float = 1e-4
    iterations: int = 2000  # copying: streamed batches
    epochs: int = 10  # adding / mnist
    train_size: int = 100_000  # adding
    test_size: int = 10_000  # adding
    eval_every: int = 100  # copying
    eval_size: int = 1000  # copying held-out batch
    eval_batch_size: int = 1000
    stop_below: float = 0.0  # stop once the eval loss falls below this (0: never)
    forget_bias: float = 1.0
    seed: int = 0
    precision: str = "double"
    out_dir: str = "runs/default"
    data_dir: str = ""
    permute_seed: int = 0
    hidden_norms_every: int = 0  # 0: off
    orth_every: int = 1  # evaluations between orthogonality scores

    def resolved_rho(self) -> int:
        if self.rho >= 0:
            return self.rho
        return int(round(DEFAULT_RHO_FRACTION[self.task] * self.n))

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("n", "T", "batch_size", "eval_size", "eval_batch_size", "train_size", "test_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("iterations", "epochs", "hidden_norms_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.rho > self.n:
            raise ConfigError(f"rho={self.rho} exceeds n={self.n}")
        if self.task == "adding" and self.T < 4:
            raise ConfigError("adding task needs T >= 4")
        if self.lr <= 0 or self.lr_rec <= 0:
            raise ConfigError("learning rates must be positive")
        if self.precision not in ("double", "single"):
            raise ConfigError(f"precision must be 'double' or 'single', got {self.precision!r}")
        if self.task == "adding" and self.train_size % self.batch_size:
            raise ConfigError("adding train_size must be a multiple of batch_size")
        if check_paths and self.task.startswith("mnist"):
            root = self.data_dir or os.environ.get("SCORNN_DATA", "")
            if not root or not Path(root).is_dir():
                raise ConfigError(f"MNIST data directory {root!r} does not exist (set data_dir or SCORNN_DATA)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def coerce(key: str, value: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _CASTS[_FIELD_TYPES[key]](value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load(path) -> dict:
    return parse_kv(Path(path).read_text())


# Desk-scale presets. Batch sizes, learning rates and iteration budgets for the
# synthetic tasks are choices of this package; n and rho fractions follow the
# published experiments where those are given.
PRESETS: dict[str, dict] = {
    "copying": dict(task="copying", model="scornn", n=64, T=200, batch_size=128,
                    iterations=2000, lr=1e-3, lr_rec=1e-4),
    "copying-lstm": dict(task="copying", model="lstm", n=40, T=200, batch_size=128,
                         iterations=2000, lr=1e-3),
    "adding": dict(task="adding", model="scornn", n=64, T=200, batch_size=50,
                   epochs=10, train_size=100_000, test_size=10_000, lr=1e-3, lr_rec=1e-4,
                   stop_below=0.05),
    "adding-lstm": dict(task="adding", model="lstm", n=22, T=200, batch_size=50,
                        epochs=10, train_size=100_000, test_size=10_000, lr=1e-3, forget_bias=2.0),
    "mnist": dict(task="mnist", model="scornn", n=128, batch_size=50, epochs=5,
                  lr=1e-3, lr_rec=1e-4),
    "mnist-170": dict(task="mnist", model="scornn", n=170, batch_size=50, epochs=70,
                      lr=1e-3, lr_rec=1e-4),
    "mnist-permuted-170": dict(task="mnist-permuted", model="scornn", n=170, batch_size=50,
                               epochs=70, lr=1e-3, lr_rec=1e-4),
    "mnist-512": dict(task="mnist", model="scornn", n=512, batch_size=50, epochs=70,
                      lr=1e-3, lr_rec=1e-5),
}


def build(preset: str | None = None, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then preset, then config file, then explicit overrides."""
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path:
        values.update(load(path))
    if overrides:
        values.update({k: coerce(k, v) if isinstance(v, str) else v for k, v in overrides.items()})
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**values)
