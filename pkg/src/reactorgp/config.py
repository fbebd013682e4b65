"""Run configuration: one JSON document covering every stage."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from typing import Any, Dict

from .gp import GAConfig
from .reactor import ReactorParams
from .surrogate import TrainingConfig


class ConfigError(ValueError):
    pass


DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "out": "run",
    "reactor": {},
    "data": {"n_recipes": 30, "ratios": [0.7, 0.2, 0.1]},
    "training": {"episodes": 300},
    "fitness": {"n_start_states": 50, "horizon": 10, "gamma": 1.0, "n_select_states": 100},
    "ga": {"population": 100, "iterations": 30},
    "select": {"max_complexity": 12, "complexity": None},
    "evaluation": {"setpoints": [352.0, 358.0, 362.0, 365.0], "from_feed_start": True},
    "simulate": {"setpoint": 358.0},
}

# which config sections each stage reads (its own and everything upstream)
STAGE_SECTIONS = {
    "simulate": ("seed", "reactor", "simulate"),
    "gen-data": ("seed", "reactor", "data"),
    "train-surrogate": ("training",),
    "evolve": ("fitness", "ga"),
    "select": ("select", "fitness"),
    "codegen": (),
    "evaluate": ("evaluation", "reactor", "seed"),
}
UPSTREAM = {
    "simulate": None,
    "gen-data": None,
    "train-surrogate": "gen-data",
    "evolve": "train-surrogate",
    "select": "evolve",
    "codegen": "select",
    "evaluate": "select",
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k not in ("reactor", "training", "ga"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(section, cls, d):
    known = {f.name for f in fields(cls)}
    bad = sorted(set(d) - known)
    if bad:
        raise ConfigError(f"unknown {section} key(s): {', '.join(bad)}")


class RunConfig:
    """Validated view over the merged JSON document."""

    def __init__(self, doc: dict | None = None):
        self.doc = _merge(DEFAULTS, doc or {})
        if not isinstance(self.doc["seed"], int) or isinstance(self.doc["seed"], bool):
            raise ConfigError("seed must be an integer")
        _check_keys("reactor", ReactorParams, self.doc["reactor"])
        _check_keys("training", TrainingConfig, self.doc["training"])
        _check_keys("ga", GAConfig, self.doc["ga"])
        try:
            self.reactor_params()
            self.training_config()
            self.ga_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        f = self.doc["fitness"]
        if f["n_start_states"] < 1 or f["horizon"] < 1 or not 0 <= f["gamma"] <= 1:
            raise ConfigError("fitness needs n_start_states >= 1, horizon >= 1, 0 <= gamma <= 1")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls(doc)

    def override(self, **kw) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        for k, v in kw.items():
            if v is not None:
                doc[k] = v
        return RunConfig(doc)

    @property
    def seed(self) -> int:
        return self.doc["seed"]

    @property
    def out(self) -> str:
        return self.doc["out"]

    def __getitem__(self, key):
        return self.doc[key]

    def reactor_params(self) -> ReactorParams:
        return ReactorParams.from_dict(self.doc["reactor"])

    def training_config(self) -> TrainingConfig:
        d = dict(self.doc["training"])
        d.setdefault("seed", self.seed)
        return TrainingConfig(**d)

    def ga_config(self) -> GAConfig:
        d = dict(self.doc["ga"])
        d.setdefault("seed", self.seed)
        return GAConfig(**d)

    def stage_hash(self, stage: str) -> str:
        """Hash of everything a stage's output depends on, upstream included."""
        parts = {}
        s = stage
        while s is not None:
            parts[s] = {k: self.doc[k] for k in STAGE_SECTIONS[s]}
            if s == "select":
                # a manual --complexity pick is recorded in the artifact, not hashed
                parts[s]["select"] = {k: v for k, v in self.doc["select"].items()
                                      if k != "complexity"}
            s = UPSTREAM[s]
        text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"

