"""Run configuration: one TOML file with a section per pipeline stage.

Recognised sections are ``[scene]``, ``[propagation]``, ``[ofdm]``,
``[oracle]``, ``[dataset]``, ``[model]``, ``[train]`` and ``[eval]``.  Every
key is optional; defaults reproduce the reference setup.  Buildings may be
overridden with ``[[scene.buildings]]`` tables carrying ``name``, ``center``
(x, y), ``size`` (x, y, height).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .channel import OFDMConfig
from .oracle import OracleConfig
from .propagation import PropagationConfig
from .scene import Box, Building, Layout, default_layout


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SceneConfig:
    counts: dict = field(default_factory=lambda: {"car": 35, "truck": 5, "bus": 25, "human": 20})
    dt: float = 0.1
    enforce_count_ranges: bool = True
    main_street_length: float = 429.88
    secondary_street_length: float = 215.05
    street_width: float = 15.0
    sidewalk_width: float = 10.0
    bs_height: float = 6.0
    bs_spacing: float = 60.0
    num_antennas: int = 128
    buildings: list | None = None

    def layout(self) -> Layout:
        buildings = None
        if self.buildings is not None:
            buildings = [Building(b["name"], Box.from_center(b["center"][0], b["center"][1],
                                                             b["size"][0], b["size"][1], b["size"][2]))
                         for b in self.buildings]
        return default_layout(self.main_street_length, self.secondary_street_length,
                              self.street_width, self.sidewalk_width,
                              bs_height=self.bs_height, bs_spacing=self.bs_spacing,
                              num_antennas=self.num_antennas, buildings=buildings)


@dataclass(frozen=True)
class OracleSection:
    snr_db: float = 5.0

    def oracle(self) -> OracleConfig:
        return OracleConfig.from_db(self.snr_db)


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 1
    episodes: int = 3
    scenes: int = 400
    r: int = 8
    horizons: tuple = (1, 3, 5)
    train_fraction: float = 0.8
    codebook_size: int = 128
    image_width: int = 160
    image_height: int = 90
    write_images: bool = True
    drop_blocked: bool = True


@dataclass(frozen=True)
class ModelSection:
    embed_dim: int = 50
    hidden: int = 20
    dropout: float = 0.2


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 1000
    epochs: int = 100
    seed: int = 0
    depths: tuple = (2,)
    horizons: tuple | None = None  # defaults to dataset.horizons


@dataclass(frozen=True)
class EvalSection:
    sigma: float = 0.5


@dataclass(frozen=True)
class Config:
    scene: SceneConfig = field(default_factory=SceneConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    ofdm: OFDMConfig = field(default_factory=OFDMConfig)
    oracle: OracleSection = field(default_factory=OracleSection)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @property
    def train_horizons(self) -> tuple:
        return tuple(self.train.horizons or self.dataset.horizons)

    def with_seed(self, seed: int) -> "Config":
        return dataclasses.replace(self, dataset=dataclasses.replace(self.dataset, seed=seed))


_SECTIONS = {
    "scene": SceneConfig, "propagation": PropagationConfig, "ofdm": OFDMConfig,
    "oracle": OracleSection, "dataset": DatasetConfig, "model": ModelSection,
    "train": TrainSection, "eval": EvalSection,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _build_section(name: str, cls, raw: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        if isinstance(value, list) and key != "buildings":
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def from_dict(raw: dict) -> Config:
    sections = {}
    for name, value in raw.items():
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown section")
        if not isinstance(value, dict):
            raise ConfigError(name, "expected a table")
        sections[name] = _build_section(name, _SECTIONS[name], value)
    cfg = Config(**sections)
    validate(cfg)
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML ({exc})") from exc
    return from_dict(raw)


def validate(cfg: Config) -> None:
    d = cfg.dataset
    if d.r < 1:
        raise ConfigError("dataset.r", "must be >= 1")
    for n in d.horizons:
        if not 1 <= n <= d.r:
            raise ConfigError("dataset.horizons", f"N={n} must satisfy 1 <= N <= r={d.r}")
    for n in cfg.train_horizons:
        if n not in d.horizons:
            raise ConfigError("train.horizons", f"N={n} is not generated by dataset.horizons")
    if not 0 < d.train_fraction < 1:
        raise ConfigError("dataset.train_fraction", "must lie strictly between 0 and 1")
    if d.episodes < 1 or d.scenes < 1:
        raise ConfigError("dataset.scenes", "episodes and scenes must be >= 1")
    if d.image_width < 1 or d.image_height < 1:
        raise ConfigError("dataset.image_width", "image dimensions must be positive")
    if d.codebook_size < 1:
        raise ConfigError("dataset.codebook_size", "must be >= 1")
    if not cfg.scene.dt > 0:
        raise ConfigError("scene.dt", "must be positive")
    if not cfg.eval.sigma > 0:
        raise ConfigError("eval.sigma", "must be positive")
    for q in cfg.train.depths:
        if q < 1:
            raise ConfigError("train.depths", "depths must be >= 1")
    if cfg.train.learning_rate < 0:
        raise ConfigError("train.learning_rate", "must be non-negative")
    if cfg.train.batch_size < 1:
        raise ConfigError("train.batch_size", "must be >= 1")
    if not 0 <= cfg.model.dropout < 1:
        raise ConfigError("model.dropout", "must lie in [0, 1)")
