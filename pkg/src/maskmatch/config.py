"""Layered run configuration: defaults, config file, command-line overrides.

Config files may be TOML or JSON (chosen by extension).  Unknown keys
are rejected so typos fail loudly, and the effective merged view is
echoed to the run's output directory as ``config.resolved.json``.
The full schema is documented in ``docs/config.md``.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import UsageError
from .training import TrainConfig

RESOLVED_NAME = "config.resolved.json"

DEFAULTS: dict = {
    "encoder": {
        "context_margin": 0.5,
    },
    "mining": {
        "batch_size": 16,
        "seed": 0,
        "strategy": "adjacent",
    },
    "attn": {
        "d_k": 0,  # 0 means "match the feature dim"
        "max_tokens": 4096,
    },
    "loss": {
        "temperature": 0.2,
    },
    "head": {
        "hidden": 256,
        "d_f": 128,
    },
    "train": {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "steps": 200,
        "seed": 0,
        "checkpoint_interval": 0,
    },
    "eval": {
        "vis_threshold": 0.5,
        "contour_tol": 0.0075,
    },
}


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where} must be a table/object")
            out[key] = _deep_merge(base[key], value, where)
        else:
            if isinstance(value, dict):
                raise UsageError(f"config key {where} must be a value, not a table")
            out[key] = value
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as f:
            return tomllib.load(f)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    raise UsageError(f"config file must be .toml or .json, got {path.suffix!r}")


def resolve_config(config_path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then dotted-key overrides."""
    resolved = DEFAULTS
    if config_path is not None:
        resolved = _deep_merge(resolved, load_config_file(config_path))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        resolved = _deep_merge(resolved, {section: {key: value}})
    return resolved


def echo_resolved(resolved: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / RESOLVED_NAME
    target.write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    return target


def to_train_config(resolved: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(resolved["train"]["learning_rate"]),
        beta1=float(resolved["train"]["beta1"]),
        beta2=float(resolved["train"]["beta2"]),
        adam_eps=float(resolved["train"]["eps"]),
        steps=int(resolved["train"]["steps"]),
        seed=int(resolved["train"]["seed"]),
        mining_seed=int(resolved["mining"]["seed"]),
        batch=int(resolved["mining"]["batch_size"]),
        context_margin=float(resolved["encoder"]["context_margin"]),
        temperature=float(resolved["loss"]["temperature"]),
        hidden=int(resolved["head"]["hidden"]),
        latent_dim=int(resolved["head"]["d_f"]),
        d_k=int(resolved["attn"]["d_k"]),
        max_tokens=int(resolved["attn"]["max_tokens"]),
        checkpoint_interval=int(resolved["train"]["checkpoint_interval"]),
        mining_strategy=str(resolved["mining"]["strategy"]),
    )
