"""Run configuration: TOML file merged over documented defaults.

Unknown keys are rejected, missing keys take the defaults below, and the
fully resolved tree is hashed so every artifact can name the config that
produced it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from ..errors import ConfigError

# Items with a hidden ``truth`` vector stand in for real food: ``simulate``
# records their force profiles, and only those recordings reach calibration.
DEFAULT_ITEMS = {
    "tomato": {
        "height": 0.05,
        "spring_count": 16,
        "anchor_y": 0.0,
        "held_out": False,
        "truth": [2500.0, 80.0, 2500.0, 5.0, 100.0, 0.5],
        "profiles": [],
    },
    "cucumber": {
        "height": 0.035,
        "spring_count": 16,
        "anchor_y": 0.0,
        "held_out": False,
        "truth": [3500.0, 150.0, 3000.0, 10.0, 200.0, 0.6],
        "profiles": [],
    },
    "potato": {
        "height": 0.045,
        "spring_count": 16,
        "anchor_y": 0.0,
        "held_out": False,
        "truth": [5000.0, 250.0, 3500.0, 15.0, 400.0, 0.75],
        "profiles": [],
    },
    "carrot": {
        "height": 0.03,
        "spring_count": 16,
        "anchor_y": 0.0,
        "held_out": True,
        "truth": [4500.0, 200.0, 3000.0, 12.0, 300.0, 0.7],
        "profiles": [],
    },
}

DEFAULTS = {
    "run": {"seed": 0, "out": "runs/default"},
    "bridge": {"exchange_period": 2e-3, "dt_cut": 1e-5, "dt_robot": 1e-4, "publish": "mean"},
    "chain": {
        "link_lengths": [0.4, 0.4, 0.2],
        "joint_velocity_limit": 3.141592653589793,
        "command_lag": 0.002,
        "base": [-0.55, 0.10],
    },
    "simulate": {
        "items": [],  # empty: every item with a truth vector
        "speed": 0.02,
        "lateral_speed": 0.005,
        "clearance": 0.002,
        "hold": 0.1,
        "sample_period": 1e-3,
    },
    "calibration": {
        "n_startup": 20,
        "n_trials": 100,
        "gamma": 0.25,
        "n_candidates": 24,
        "learning_rate": 0.05,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "iterations": 200,
        "solver_step": 1e-3,
    },
    "env": {
        "w1": 1.0,
        "w2": 1.0,
        "w3": 0.01,
        "f_max": 40.0,
        "f_scale": 10.0,
        "jerk_cap": 1e4,
        "reward_mode": "monotone",
        "target_tolerance": 1e-3,
        "workspace_y": [-0.03, 0.03],
        "workspace_z": [-0.02, 0.08],
        "start_clearance": 5e-3,
        "max_steps": 250,
        "agent_period": 0.02,
        "history": 12,
        "delta_y": [-5e-4, 5e-4],
        "delta_z": [-1.6e-3, 4e-4],
        "kc": [200.0, 2000.0],
        "kp": [2.0, 6.0],
        "kd": [0.0, 0.002],
        "noise": 0.05,
    },
    "sac": {
        "gamma": 0.99,
        "tau": 0.005,
        "alpha": 0.2,
        "auto_alpha": True,
        "batch_size": 128,
        "actor_lr": 3e-4,
        "critic_lr": 3e-4,
        "alpha_lr": 3e-4,
        "tcn_channels": 16,
        "hidden": 128,
        "per_alpha": 0.6,
        "per_beta": 0.4,
        "buffer_size": 100000,
        "total_steps": 30000,
        "warmup_steps": 1000,
        "updates_per_step": 1,
        "eval_every": 2500,
        "eval_episodes": 10,
    },
    "train": {"seeds": [0], "resume": False},
    "eval": {"episodes_per_item": 0, "seed": 12345},
    "items": DEFAULT_ITEMS,
}

_ITEM_KEYS = set(DEFAULT_ITEMS["tomato"])


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if path == "items":
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a table")
            unknown = set(value) - _ITEM_KEYS
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
            item = copy.deepcopy(base.get(key, {**DEFAULT_ITEMS["tomato"], "truth": None}))
            item.update(value)
            out[key] = item
            continue
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a table")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    tree: dict

    def __getitem__(self, key):
        return self.tree[key]

    @property
    def hash(self) -> str:
        blob = json.dumps(self.tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.tree["run"]["out"])

    @property
    def seed(self) -> int:
        return int(self.tree["run"]["seed"])

    def items(self, held_out: bool | None = None) -> dict:
        return {
            name: spec
            for name, spec in self.tree["items"].items()
            if held_out is None or bool(spec["held_out"]) == held_out
        }


def resolve(overrides: dict | None = None, seed: int | None = None, out: str | None = None) -> RunConfig:
    tree = _merge(DEFAULTS, overrides or {}, "")
    if seed is not None:
        if not (isinstance(seed, int) and 0 <= seed < 2**64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        tree["run"]["seed"] = seed
    if out is not None:
        tree["run"]["out"] = str(out)
    _validate(tree)
    return RunConfig(tree)


def load_config(path=None, seed: int | None = None, out: str | None = None) -> RunConfig:
    overrides = {}
    if path is not None:
        path = Path(path)
        try:
            overrides = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} does not exist") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return resolve(overrides, seed, out)


def _validate(tree: dict):
    for name, spec in tree["items"].items():
        if not spec.get("height", 0) > 0:
            raise ConfigError(f"item {name!r}: height must be positive")
        if int(spec.get("spring_count", 0)) < 1:
            raise ConfigError(f"item {name!r}: spring_count must be at least 1")
        truth = spec.get("truth")
        if truth is not None and len(truth) != 6:
            raise ConfigError(f"item {name!r}: truth needs 6 values")
    for name in tree["simulate"]["items"]:
        if name not in tree["items"]:
            raise ConfigError(f"simulate.items names unknown scene {name!r}")
    if not tree["train"]["seeds"]:
        raise ConfigError("train.seeds must not be empty")
