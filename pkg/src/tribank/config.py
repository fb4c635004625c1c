"""Fusion weights and engine configuration."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .featbank import DEFAULT_K_OBJECT, DEFAULT_K_PATCH
from .textbank import DEFAULT_BANK_RESOLUTION

CONFIG_ENV = "TRIBANK_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    lambda_text: float = 0.05
    lambda_object: float = 0.3
    lambda_patch: float = 0.65

    def __post_init__(self):
        for name in ("lambda_text", "lambda_object", "lambda_patch"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0 or v != v:
                raise ConfigError(f"{name} must be a nonnegative number, got {v!r}")
            object.__setattr__(self, name, float(v))

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.lambda_text, self.lambda_object, self.lambda_patch)

    @classmethod
    def parse(cls, text: str) -> "FusionConfig":
        """Either a preset name or three comma-separated weights."""
        if text in PRESETS:
            return PRESETS[text]
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError:
            raise ConfigError(f"bad fusion weights {text!r}") from None
        if len(parts) != 3:
            raise ConfigError(f"expected three fusion weights, got {text!r}")
        return cls(*parts)


# single-bank and leave-one-out projections for ablation runs
PRESETS = {
    "full": FusionConfig(),
    "text": FusionConfig(1.0, 0.0, 0.0),
    "object": FusionConfig(0.0, 1.0, 0.0),
    "patch": FusionConfig(0.0, 0.0, 1.0),
    "no-text": FusionConfig(0.0, 0.3, 0.65),
    "no-object": FusionConfig(0.05, 0.0, 0.65),
    "no-patch": FusionConfig(0.05, 0.3, 0.0),
}


@dataclass(frozen=True)
class EngineConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    k_object: int = DEFAULT_K_OBJECT
    k_patch: int = DEFAULT_K_PATCH
    seed: int = 0
    bank_resolution: tuple[int, int] = DEFAULT_BANK_RESOLUTION
    relaxed: bool = False
    bank_path: str | None = None

    def __post_init__(self):
        for name in ("k_object", "k_patch"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        res = self.bank_resolution
        if isinstance(res, int):
            res = (res, res)
        try:
            res = tuple(int(v) for v in res)
        except (TypeError, ValueError):
            raise ConfigError(f"bad bank resolution {self.bank_resolution!r}") from None
        if len(res) != 2 or min(res) < 1:
            raise ConfigError(f"bad bank resolution {self.bank_resolution!r}")
        object.__setattr__(self, "bank_resolution", res)
        if not isinstance(self.relaxed, bool):
            raise ConfigError("relaxed must be a boolean")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bank_resolution"] = list(self.bank_resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        d = dict(d)
        if "fusion" in d:
            fusion = d["fusion"]
            if isinstance(fusion, str):
                d["fusion"] = FusionConfig.parse(fusion)
            elif isinstance(fusion, dict):
                try:
                    d["fusion"] = FusionConfig(**fusion)
                except TypeError as exc:
                    raise ConfigError(str(exc)) from None
            elif isinstance(fusion, (list, tuple)) and len(fusion) == 3:
                d["fusion"] = FusionConfig(*fusion)
            else:
                raise ConfigError(f"bad fusion setting {fusion!r}")
        return cls(**d)

    def with_overrides(self, **overrides) -> "EngineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path: str | os.PathLike | None = None, **overrides) -> EngineConfig:
    """Read a JSON config (or the file named by $TRIBANK_CONFIG) and apply flag overrides."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    cfg = EngineConfig()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at char {exc.pos}") from None
        cfg = EngineConfig.from_dict(raw)
    return cfg.with_overrides(**overrides)
