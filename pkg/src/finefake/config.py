"""Run configuration: one structured file covering the model, training,
data, and synthesis sections, with named profiles and dotted-path
overrides.

Paper-scale values are the defaults of record; the `desk` profile swaps
in the small-model settings used for laptop-scale experiments. Unknown
keys are rejected, and every consumer echoes the effective config into
its run directory.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict

from .data import SyntheticConfig
from .detector import ModelConfig
from .errors import ConfigurationError
from .trainer import TrainConfig


class PerVideoCounts(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train: int = 270
    val: int = 150
    test: int = 150

    def as_dict(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


class DataConfig(BaseModel):
    """Preprocessing and sampling protocol."""

    model_config = ConfigDict(extra="forbid")

    image_size: int = 256
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    per_video_counts: PerVideoCounts | None = PerVideoCounts()
    sampling_seed: int = 0


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    synth: SyntheticConfig = SyntheticConfig()


PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": {
        "model": {
            "backbone": {"channels": [8, 16, 32, 64]},
            "fusion": {"common_dim": 32},
            "selector": {"top_d": [64, 32, 16, 8]},
            "embed_dim": 64,
        },
        "train": {"batch_size": 32, "max_epochs": 6, "early_stop_patience": 2},
        "data": {"image_size": 64, "per_video_counts": None},
        "synth": {"image_size": 64},
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_dotted(tree: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override below scalar key {part!r} in {dotted!r}")
    node[parts[-1]] = value


def parse_overrides(pairs: list[str]) -> dict:
    """Turn `a.b.c=value` strings (values parsed as YAML scalars) into a
    nested override dict."""
    tree: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse override value {raw!r}: {exc}") from exc
        _set_dotted(tree, key.strip(), value)
    return tree


def load_run_config(
    path: Path | str | None = None,
    profile: str | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Defaults < profile < config file < overrides, then validate."""
    tree: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigurationError(
                f"unknown profile {profile!r}, choose from {sorted(PROFILES)}"
            )
        tree = _deep_merge(tree, PROFILES[profile])
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path} must contain a mapping at the top level")
        tree = _deep_merge(tree, loaded)
    if overrides:
        tree = _deep_merge(tree, overrides)
    try:
        return RunConfig(**tree)
    except pydantic.ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def echo_config(cfg: RunConfig, path: Path | str) -> Path:
    """Write the effective config so the run can be reproduced."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
    return path
