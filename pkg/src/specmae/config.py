"""JSON configuration shared by the CLI subcommands.

Top-level sections: ``train``, ``model``, ``scene``, ``band_map``,
``analysis``. Every section is optional; unknown keys anywhere are errors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig
from .spectral import S2_ROLE_NAMES, BandMap
from .synthetic import SceneSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisConfig:
    bins: int = 100
    strategies: tuple[str, ...] = ("ssdtm", "random", "ssdtm_no_noise", "ssdtm_static")
    ratios: tuple[float, ...] = (0.5, 0.75, 0.9)
    curriculum_epochs: int = 10
    draws: int = 1000
    sample_size: int = 16
    sentinel: float = -1.0


@dataclass(frozen=True)
class CliConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    band_map: dict = field(default_factory=lambda: dict(S2_ROLE_NAMES))
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def resolve_band_map(self, bands) -> BandMap:
        try:
            return BandMap.parse(self.band_map, bands)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "model": self.model.to_dict(),
            "scene": self.scene.to_dict(),
            "band_map": dict(self.band_map),
            "analysis": asdict(self.analysis),
        }


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return data


def _check_band_map(bm) -> dict:
    if not isinstance(bm, dict):
        raise ConfigError("band_map must be an object")
    values = list(bm.values())
    if all(isinstance(v, str) for v in values):
        BandMap.from_names(values, bm)  # roles known, names distinct
    elif all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        BandMap(bm)
    else:
        raise ConfigError("band_map values must be all band names or all channel indices")
    return dict(bm)


def config_from_dict(d: dict) -> CliConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - {"train", "model", "scene", "band_map", "analysis"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    cfg = CliConfig()
    try:
        if "train" in d:
            cfg = replace(cfg, train=TrainConfig.from_dict(_section(TrainConfig, d["train"], "train")))
        if "model" in d:
            cfg = replace(cfg, model=ModelConfig(**_section(ModelConfig, d["model"], "model")))
        if "scene" in d:
            cfg = replace(cfg, scene=SceneSpec.from_dict(_section(SceneSpec, d["scene"], "scene")))
        if "band_map" in d:
            cfg = replace(cfg, band_map=_check_band_map(d["band_map"]))
        if "analysis" in d:
            a = dict(_section(AnalysisConfig, d["analysis"], "analysis"))
            for key in ("strategies", "ratios"):
                if key in a:
                    a[key] = tuple(a[key])
            cfg = replace(cfg, analysis=AnalysisConfig(**a))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        cfg.scene.check_patch(cfg.model.patch_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None) -> CliConfig:
    if path is None:
        return CliConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
