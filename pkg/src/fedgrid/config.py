"""Experiment configuration.

A config is one JSON document.  Missing keys take the defaults below
(1000 nodes, sigma 0.1, six lags, 2x20 hidden units, eta 0.001, one-day
mini-batches, at most 150 rounds, 90th-percentile thresholds).
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.features import CalendarFilter, LagSpec
from .errors import ConfigError, FedGridError
from .nn import Activation, Hyperparams, LayerSpec

DEFAULTS: dict = {
    "seed": 42,
    "topology": {
        "num_nodes": 1000,
        "sigma": 0.1,
        "correlation": 0.0,
        "days": 61,
        "start": "2021-06-01",
        "profile": {},
    },
    "model": {"hidden_dims": [20, 20], "activation": "relu"},
    "training": {
        "learning_rate": 0.001,
        "mini_batch_size": 96,
        "max_epochs": 150,
        "tolerance": 0.001,
        "alpha": "uniform",
        "workers": 1,
    },
    "lags": [15, 30, 60, 90, 120, 1440],
    "calendar": {"keep_weekdays": False, "holidays": []},
    "split": {"boundary": None, "carry_over_days": 1},
    "thresholds": {
        "swing": {"percentile": 90.0, "quantity": "delta_p", "absolute_delta": False},
        "shaving": {"percentile": 90.0, "quantity": "absolute_power"},
    },
    "shaving": {"mode": "cap", "lead_hours": 24},
    "paths": {"data": None, "out": "out"},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "profile":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls(_merge(DEFAULTS, d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_merge(self.data, sections))

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        """Content hash of everything except file paths."""
        content = {k: v for k, v in self.data.items() if k != "paths"}
        canon = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    # -- typed views ----------------------------------------------------------

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def layer_spec(self) -> LayerSpec:
        m = self.data["model"]
        return LayerSpec(len(self.data["lags"]), tuple(m["hidden_dims"]), 1, Activation(m["activation"]))

    def hyperparams(self) -> Hyperparams:
        t = self.data["training"]
        return Hyperparams(float(t["learning_rate"]), int(t["mini_batch_size"]),
                           int(t["max_epochs"]), float(t["tolerance"]))

    def lag_spec(self) -> LagSpec:
        return LagSpec(tuple(self.data["lags"]))

    def calendar(self) -> CalendarFilter:
        c = self.data["calendar"]
        return CalendarFilter(bool(c["keep_weekdays"]), frozenset(c["holidays"]))

    def validate(self) -> None:
        try:
            self.layer_spec()
            h = self.hyperparams()
            self.lag_spec()
            self.calendar()
            np.datetime64(self.data["topology"]["start"], "D")
        except (FedGridError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        if h.mini_batch_size != 96:
            raise ConfigError("mini-batches are whole days; mini_batch_size must be 96")
        topo = self.data["topology"]
        if int(topo["num_nodes"]) < 1 or int(topo["days"]) < 1:
            raise ConfigError("num_nodes and days must be >= 1")
        alpha = self.data["training"]["alpha"]
        if not (alpha in ("uniform", "sum") or isinstance(alpha, list)):
            raise ConfigError(f"training.alpha must be 'uniform', 'sum' or a list, got {alpha!r}")
        if self.data["shaving"]["mode"] not in ("cap", "reduce_by"):
            raise ConfigError("shaving.mode must be 'cap' or 'reduce_by'")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
