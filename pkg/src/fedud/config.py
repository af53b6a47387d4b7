"""Experiment configuration: defaults, strict TOML parsing, digests.

Every tunable in the simulator is reachable from one sectioned config file.
Parsing is strict: unknown sections or keys are hard errors with the full
key path, so a typo can never silently fall back to a default.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULTS = {
    "data": {
        "mode": "synthetic",  # synthetic | csv
        "n_train": 50000,
        "n_val": 10000,
        "n_test": 10000,
        "aligned_fraction": 0.6,
        "host_slots": 10,
        "guest_slots": 12,
        "vocab_size": 1000,
        "label_noise": 1.2,
        "seed": 7,
        "host_csv": "",
        "guest_csv": "",
    },
    "model": {
        "embed_dim": 10,
        "bottom_dims": [512, 256, 128],
        "top_dims": [256, 128],
        "rep_dims": [128, 128],
    },
    "training": {
        "method": "fedud",  # fedud | fedsplitnn | local_dnn
        "alpha": 1.0,
        "beta": 1.0,
        "optimizer": "adam",
        "lr": 0.001,
        "batch_size": 256,
        "max_epochs": 20,
        "patience": 1,
        "init_seed": 1,
        "shuffle_seed": 2,
        "distill_update_guest": False,
        "step2_reinit": False,
    },
    "eval": {
        "seeds": [1],
    },
    "output": {
        "dir": "runs",
    },
    "sweep": {
        "axis": "unaligned_samples",  # guest_slots | unaligned_samples | alpha | beta
        "values": [0.0, 0.25, 0.5, 1.0],
        "seeds": [1, 2, 3, 4, 5],
    },
}

SWEEP_AXES = ("guest_slots", "unaligned_samples", "alpha", "beta")


def _merge_section(section: str, given: dict, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        path = f"{section}.{key}"
        if key not in defaults:
            raise ConfigError(f"{path}: unknown key")
        ref = defaults[key]
        if isinstance(ref, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{path}: expected a boolean")
        elif isinstance(ref, int):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{path}: expected an integer")
        elif isinstance(ref, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path}: expected a number")
            val = float(val)
        elif isinstance(ref, str):
            if not isinstance(val, str):
                raise ConfigError(f"{path}: expected a string")
        elif isinstance(ref, list):
            if not isinstance(val, list):
                raise ConfigError(f"{path}: expected a list")
            val = list(val)
        out[key] = val
    return out


def resolve_config(given: dict) -> dict:
    """Overlay a parsed config onto the defaults, rejecting unknown keys."""
    out = {}
    for section, body in given.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a section (table)")
    for section, defaults in DEFAULTS.items():
        out[section] = _merge_section(section, given.get(section, {}), defaults)
    return out


def load_config(path=None) -> dict:
    """Load a TOML config file; None yields the pure defaults."""
    if path is None:
        return resolve_config({})
    try:
        with open(path, "rb") as fh:
            given = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: config file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(given)


def canonical_digest(obj) -> str:
    """sha256 over a canonical JSON encoding; the run fingerprint."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def experiment_digest(cfg: dict) -> str:
    """Digest of the sections that determine what a trained model is."""
    return canonical_digest({k: cfg[k] for k in ("data", "model", "training")})


def apply_seed_override(cfg: dict, seed: int | None) -> dict:
    """One seed drives everything: data generation, init and shuffling.

    Named random streams keep the three uses independent even though they
    share the base integer.
    """
    if seed is None:
        return cfg
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    out = copy.deepcopy(cfg)
    out["data"]["seed"] = seed
    out["training"]["init_seed"] = seed
    out["training"]["shuffle_seed"] = seed
    return out


# ---------------------------------------------------------------------------
# trainer-facing view
# ---------------------------------------------------------------------------

METHODS = ("fedud", "fedsplitnn", "local_dnn")


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides the data itself."""

    method: str = "fedud"
    alpha: float = 1.0
    beta: float = 1.0
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 20
    patience: int = 1
    init_seed: int = 1
    shuffle_seed: int = 2
    embed_dim: int = 10
    bottom_dims: tuple[int, ...] = (512, 256, 128)
    top_dims: tuple[int, ...] = (256, 128)
    rep_dims: tuple[int, ...] = (128, 128)
    distill_update_guest: bool = False
    step2_reinit: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"training.method: unknown method {self.method!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        for name in ("bottom_dims", "top_dims", "rep_dims"):
            dims = getattr(self, name)
            if not dims or any(d < 1 for d in dims):
                raise ConfigError(f"model.{name}: widths must be positive and non-empty")
        if self.init_seed < 0 or self.shuffle_seed < 0:
            raise ConfigError("seeds must be non-negative")

    def to_dict(self) -> dict:
        return {
            "method": self.method, "alpha": self.alpha, "beta": self.beta,
            "optimizer": self.optimizer, "lr": self.lr,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "patience": self.patience, "init_seed": self.init_seed,
            "shuffle_seed": self.shuffle_seed, "embed_dim": self.embed_dim,
            "bottom_dims": list(self.bottom_dims), "top_dims": list(self.top_dims),
            "rep_dims": list(self.rep_dims),
            "distill_update_guest": self.distill_update_guest,
            "step2_reinit": self.step2_reinit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for name in ("bottom_dims", "top_dims", "rep_dims"):
            d[name] = tuple(d[name])
        return cls(**d)


def build_train_config(cfg: dict) -> TrainConfig:
    t = cfg["training"]
    m = cfg["model"]
    return TrainConfig(
        method=t["method"], alpha=t["alpha"], beta=t["beta"],
        optimizer=t["optimizer"], lr=t["lr"], batch_size=t["batch_size"],
        max_epochs=t["max_epochs"], patience=t["patience"],
        init_seed=t["init_seed"], shuffle_seed=t["shuffle_seed"],
        embed_dim=m["embed_dim"], bottom_dims=tuple(m["bottom_dims"]),
        top_dims=tuple(m["top_dims"]), rep_dims=tuple(m["rep_dims"]),
        distill_update_guest=t["distill_update_guest"],
        step2_reinit=t["step2_reinit"],
    )
