"""Flat ``key = value`` configuration shared by every command.

Values are resolved in order: command-line overrides, then the config file,
then built-in defaults. The file path comes from ``--config`` or, failing
that, the ``TASKATTN_CONFIG`` environment variable. See docs/config.md.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from taskattn.data import SyntheticTaskConfig
from taskattn.mtl import SCHEMES
from taskattn.trainer import TrainConfig

CONFIG_ENV = "TASKATTN_CONFIG"
SYNTH_PREFIX = "synth_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scheme: str = "DA"
    data_dir: str = "data"
    tasks: list[str] = field(default_factory=list)  # empty = every task found in data_dir
    split_seed: int = 0
    min_count: int = 1
    embeddings: str = ""
    aux_conll: str = ""
    aux_column: str = "chunk"
    aux_name: str = "aux"
    aux_weight: float = 1.0
    out_dir: str = "runs"
    checkpoint: str = ""
    transfer_tasks: list[str] = field(default_factory=list)
    shuffle_labels: bool = False
    param_tasks: int = 16
    gradcheck_seed: int = 0


@dataclass
class Config:
    run: RunConfig
    train: TrainConfig
    synth: SyntheticTaskConfig


def _key_types() -> dict[str, tuple[str, str, object]]:
    """Map every accepted key to (section, field name, default)."""
    keys = {}
    for f in fields(RunConfig):
        keys[f.name] = ("run", f.name, getattr(RunConfig(), f.name))
    for f in fields(TrainConfig):
        keys[f.name] = ("train", f.name, getattr(TrainConfig(), f.name))
    for f in fields(SyntheticTaskConfig):
        keys[SYNTH_PREFIX + f.name] = ("synth", f.name, getattr(SyntheticTaskConfig(), f.name))
    return keys


KEYS = _key_types()


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [p.strip() for p in raw.split(",") if p.strip()]
        if isinstance(default, dict):
            out = {}
            for item in filter(None, (p.strip() for p in raw.split(","))):
                name, _, value = item.partition(":")
                out[name.strip()] = float(value)
            return out
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_file(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def resolve(path: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> Config:
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    raw = parse_file(path) if path else {}
    for key, value in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    sections = {"run": {}, "train": {}, "synth": {}}
    for key, value in raw.items():
        section, name, default = KEYS[key]
        sections[section][name] = _coerce(key, value, default)
    cfg = Config(RunConfig(**sections["run"]), TrainConfig(**sections["train"]),
                 SyntheticTaskConfig(**sections["synth"]))
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    try:
        cfg.train.validate()
        cfg.synth.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    run = cfg.run
    if run.scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}, got {run.scheme!r}")
    if run.aux_column not in ("pos", "chunk"):
        raise ConfigError(f"aux_column must be 'pos' or 'chunk', got {run.aux_column!r}")
    if run.min_count < 1 or run.param_tasks < 1 or not run.aux_weight > 0:
        raise ConfigError("min_count and param_tasks must be >= 1 and aux_weight > 0")


def dump(cfg: Config) -> dict[str, object]:
    """Every key with its resolved value, e.g. for checkpoint metadata."""
    section = {"run": cfg.run, "train": cfg.train, "synth": cfg.synth}
    return {key: getattr(section[s], name) for key, (s, name, _) in KEYS.items()}
