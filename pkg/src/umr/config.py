"""Pipeline configuration file: JSON with optional sections, flags override."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .embed.train import TrainConfig
from .enhance.gateway import VlmGatewayConfig
from .synth.world import SynthConfig

LOCK_NAME = "config.lock.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    benchmark: str | None = None
    train_split: str = "train"
    eval_split: str = "test"


@dataclass(frozen=True)
class EmbedderSection:
    dim_in: int = 256
    dim_out: int = 128
    hasher_seed: int = 0
    init_seed: int = 0
    init_noise: float = 1e-3


@dataclass(frozen=True)
class EvalSection:
    mode: str = "baseline"
    workers: int = 1


SECTIONS: dict[str, type] = {
    "data": DataSection,
    "gateway": VlmGatewayConfig,
    "embedder": EmbedderSection,
    "train": TrainConfig,
    "eval": EvalSection,
    "synth": SynthConfig,
}


def _build(cls: type, values: Mapping[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    data: DataSection = field(default_factory=DataSection)
    gateway: VlmGatewayConfig = field(default_factory=VlmGatewayConfig)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any], where: str = "config") -> "PipelineConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{where}: top level must be an object")
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"{where}: unknown section(s) {unknown}; allowed: {sorted(SECTIONS)}")
        parts = {}
        for name, cls_ in SECTIONS.items():
            raw = doc.get(name, {})
            if not isinstance(raw, Mapping):
                raise ConfigError(f"{where}.{name}: must be an object")
            parts[name] = _build(cls_, raw, f"{where}.{name}")
        return cls(**parts)

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_json(doc, str(path))

    def override(self, section: str, **values) -> "PipelineConfig":
        """Apply flag values; ``None`` means the flag was not given."""
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return self
        current = dataclasses.asdict(getattr(self, section))
        current.update(given)
        return dataclasses.replace(self, **{section: _build(SECTIONS[section], current, f"--{section} flags")})

    def to_json(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def write_lock(self, out_dir: str | os.PathLike) -> Path:
        path = Path(out_dir) / LOCK_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
