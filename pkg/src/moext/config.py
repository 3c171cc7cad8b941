"""Declarative run configuration.

INI file with fixed sections; every key has a typed default. Unknown sections
or keys are rejected. Command-line flags are applied on top of the file.

    [run]        seed, deterministic, jobs, out
    [model]      width, input_downsample, tie_branch_init
    [loss]       epsilon, alpha_1, alpha_2, m
    [pretrain]   optimiser and schedule for pre-training
    [finetune]   optimiser and schedule for fine-tuning
    [ablation]   use_pretrained, use_macro_data, use_motion_extractor, use_st_loss, use_ss_loss
    [protocol]   name, exclude_test_subjects_from_pretrain
    [schemas]    <protocol name> = comma separated class list (overrides)
    [paths]      manifests, pretrain_manifests, pretrain_checkpoint, landmarks
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .errors import ConfigError, MissingFileError
from .losses import LossConfig
from .model import ModelConfig
from .training import AblationFlags, TrainConfig

_SCHEDULE = {
    "batch_size": 20,
    "epochs": 30,
    "learning_rate": 1e-4,
    "weight_decay": 1e-4,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "augment": True,
    "macro_pseudo_apex_n": 5,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0, "deterministic": True, "jobs": 1, "out": "out"},
    "model": {"width": 1.0, "input_downsample": 1, "tie_branch_init": True},
    "loss": {"epsilon": 0.3, "alpha_1": 0.5, "alpha_2": 1.0, "m": 3},
    "pretrain": dict(_SCHEDULE),
    "finetune": dict(_SCHEDULE, n_classes=0),
    "ablation": {
        "use_pretrained": True,
        "use_macro_data": True,
        "use_motion_extractor": True,
        "use_st_loss": True,
        "use_ss_loss": True,
    },
    "protocol": {"name": "SDE_CASME2_5", "exclude_test_subjects_from_pretrain": False},
    "schemas": {},
    "paths": {"manifests": [], "pretrain_manifests": [], "pretrain_checkpoint": "", "landmarks": ""},
}
# Keys that change where or how fast a run happens but not its results.
UNHASHED = {("run", "out"), ("run", "jobs")}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: Any, default: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if isinstance(default, bool):
            if s.lower() in _TRUE:
                return True
            if s.lower() in _FALSE:
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, list):
            return [p.strip() for p in s.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return s


class RunConfig:
    def __init__(self, values: dict[str, dict[str, Any]] | None = None, source: Path | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        self.source = source
        for section, items in (values or {}).items():
            for key, v in items.items():
                self.set(section, key, v)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls({s: dict(parser[s]) for s in parser.sections()}, source=path)

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if section == "schemas":
            if isinstance(value, str):
                value = [p.strip() for p in value.split(",") if p.strip()]
            self.values[section][key] = list(value)
            return
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        self.values[section][key] = _coerce(section, key, value, DEFAULTS[section][key])

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def override(self, section: str, key: str, value: Any) -> None:
        """Apply a command-line flag; ``None`` means the flag was not given."""
        if value is not None:
            self.set(section, key, value)

    def resolve_path(self, p: str) -> Path:
        """Paths from the file are relative to its directory."""
        path = Path(p)
        if not path.is_absolute() and self.source is not None:
            return (self.source.parent / path).resolve()
        return path

    def hashed_values(self) -> dict:
        return {s: {k: v for k, v in items.items() if (s, k) not in UNHASHED} for s, items in self.values.items()}

    def config_hash(self, extra: dict | None = None) -> str:
        blob = json.dumps({"config": self.hashed_values(), "extra": extra or {}}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(width=m["width"], input_downsample=m["input_downsample"],
                           tie_branch_init=m["tie_branch_init"],
                           use_motion_extractor=self.values["ablation"]["use_motion_extractor"])

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.values["loss"])

    def ablation(self) -> AblationFlags:
        return AblationFlags(**self.values["ablation"])

    def train_config(self, phase: str) -> TrainConfig:
        sched = dict(self.values[phase])
        n_classes = sched.pop("n_classes", 0) or None
        return TrainConfig(phase=phase, seed=self.values["run"]["seed"], n_classes=n_classes,
                           loss=self.loss_config(), ablation=self.ablation(), model=self.model_config(), **sched)

    def to_ini(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            for k, v in items.items():
                if isinstance(v, bool):
                    v = "true" if v else "false"
                elif isinstance(v, list):
                    v = ",".join(v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def load_run_config(path=None) -> RunConfig:
    return RunConfig.from_file(path) if path else RunConfig()
