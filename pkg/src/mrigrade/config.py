"""Experiment configuration: one TOML file, one seed, strict keys.

Every section maps onto the owning module's config dataclass; keys that the
dataclass does not define are rejected. Unless a section pins its own seed
explicitly, all stage seeds are derived from the single experiment seed, so
changing one integer re-rolls the phantom data, the split, the weight init
and the shuffle order together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .feature_extract import FeConfig
from .feedback import FeedbackConfig
from .losses import LossConfig
from .model import ModelConfig
from .phantom import PhantomConfig
from .preprocess import PreprocessConfig
from .seeding import STREAM_INIT, STREAM_SHUFFLE, STREAM_SPLIT, subseed
from .trainer import TrainConfig


class ConfigError(Exception):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class CascadeConfig:
    """Default stage-checkpoint locations for the cascade command."""

    c1: str | None = None
    c2: str | None = None
    c3: str | None = None


@dataclass(frozen=True)
class ReportConfig:
    smooth_sigma: float = 0.0
    plots: bool = True

    def __post_init__(self):
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")


SECTION_TYPES = {
    "phantom": PhantomConfig,
    "preprocess": PreprocessConfig,
    "feature_extract": FeConfig,
    "loss": LossConfig,
    "feedback": FeedbackConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "cascade": CascadeConfig,
    "report": ReportConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    feature_extract: FeConfig = field(default_factory=FeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


def _build_section(cls, data: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {', '.join(unknown)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**clean)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_dict(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Build and seed-resolve a config from a parsed TOML mapping."""
    known = set(SECTION_TYPES) | {"seed"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    sections = {}
    for name, cls in SECTION_TYPES.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _build_section(cls, data, name)

    # derive per-stage seeds from the experiment seed unless given explicitly
    if "seed" not in raw.get("phantom", {}) or seed_override is not None:
        sections["phantom"] = replace(sections["phantom"], seed=seed)
    train_raw = raw.get("train", {})
    train_cfg = sections["train"]
    if "split_seed" not in train_raw or seed_override is not None:
        train_cfg = replace(train_cfg, split_seed=subseed(seed, STREAM_SPLIT))
    if "shuffle_seed" not in train_raw or seed_override is not None:
        train_cfg = replace(train_cfg, shuffle_seed=subseed(seed, STREAM_SHUFFLE))
    sections["train"] = train_cfg
    if "init_seed" not in raw.get("model", {}) or seed_override is not None:
        sections["model"] = replace(sections["model"], init_seed=subseed(seed, STREAM_INIT))

    return ExperimentConfig(seed=seed, **sections)


def load_config_raw(path: str | Path) -> dict:
    """Parse the TOML file without building section dataclasses."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    return from_dict(load_config_raw(path), seed_override)
