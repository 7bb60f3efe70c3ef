"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .anomaly import EmbeddingConfig, IForestConfig
from .reasoning import ConfidenceParams
from .scoring import ScoringParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # inputs / outputs
    events: str | None = None
    format: str = "jsonl"
    annotations: str | None = None
    rules: str | None = None
    tactic_map: str | None = None
    sequences: str | None = None
    reports_dir: str | None = None
    ground_truth: str | None = None
    out_dir: str = "out"
    # detection
    contamination: float = 0.05
    trees: int = 100
    subsample: int = 256
    seed: int = 0
    layers: int = 2
    # edge scoring
    alpha: float = 0.4
    beta: float = 0.4
    a: float = 1.0
    b: float = 1.0
    epsilon: float = 0.01
    smoothing: bool = True
    # path confidence
    lam: float = 3.0
    w1: float = 0.5
    w2: float = 0.5
    theta: float = 0.3
    keep_single: bool = True

    def __post_init__(self) -> None:
        if self.format not in ("jsonl", "csv"):
            raise ConfigError(f"format must be jsonl or csv, got {self.format!r}")
        try:
            self.embedding()
            self.forest()
            self.scoring()
            self.confidence()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def embedding(self) -> EmbeddingConfig:
        return EmbeddingConfig(self.layers)

    def forest(self) -> IForestConfig:
        return IForestConfig(self.trees, self.subsample, self.seed, self.contamination)

    def scoring(self) -> ScoringParams:
        return ScoringParams(self.a, self.b, self.epsilon, self.alpha, self.beta, self.smoothing)

    def confidence(self) -> ConfidenceParams:
        return ConfidenceParams(self.lam, self.w1, self.w2, self.theta)

    def out(self, name: str) -> Path:
        return Path(self.out_dir) / name

    def with_overrides(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        clean = {}
        for k, v in overrides.items():
            if v is None:
                continue
            key = _ALIASES.get(k, k)
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {k!r}")
            clean[key] = _coerce(key, v)
        try:
            return replace(self, **clean)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_ALIASES = {"lambda": "lam", "out-dir": "out_dir", "tactic-map": "tactic_map",
            "reports-dir": "reports_dir", "ground-truth": "ground_truth", "keep-single": "keep_single"}
_TYPES = {name: type(f.default) if f.default is not None else str for name, f in _FIELDS.items()}


def _coerce(key: str, value: Any) -> Any:
    typ = _TYPES[key]
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_config(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {i}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"config line {i}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the config file, then non-None ``overrides`` (flags win)."""
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = cfg.with_overrides(parse_config(p.read_text(encoding="utf-8")))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if v is None:
            continue
        key = "lambda" if name == "lam" else name
        lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
