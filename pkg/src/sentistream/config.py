"""Pipeline configuration.

Precedence: built-in defaults < TOML file < explicit overrides (CLI flags).
Unknown keys in the file are rejected so typos fail loudly instead of being
silently ignored.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    data_dir: str = "./data"
    # log topics
    input_topic: str = "tweets"
    output_topic: str = "labeled"
    partitions: int = 4
    # ingest
    dedup_capacity: int = 100_000
    replay_speedup: float = 0.0  # 0 means full speed, no pacing
    # text prep
    max_vocab: int = 20_000
    min_freq: int = 2
    seq_len: int = 40
    # model / training
    embedding_dim: int = 64
    hidden_dim: int = 64
    batch_size: int = 256
    epochs: int = 3
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 1234
    # stream scoring
    interval_ms: int = 1000
    max_batch: int = 4096
    group_id: str = "scorer"
    # query server
    host: str = "127.0.0.1"
    port: int = 8750

    def __post_init__(self) -> None:
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if self.dedup_capacity < 1:
            raise ConfigError("dedup_capacity must be >= 1")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if self.interval_ms < 10:
            raise ConfigError("interval_ms must be >= 10")
        if self.max_batch < 1:
            raise ConfigError("max_batch must be >= 1")
        if not (0 < self.learning_rate):
            raise ConfigError("learning_rate must be positive")
        if self.replay_speedup < 0:
            raise ConfigError("replay_speedup must be >= 0")

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """New config with non-None overrides applied."""
        kept = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **kept)


_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Build a config from an optional TOML file plus explicit overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = _toml.loads(p.read_text(encoding="utf-8"))
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
        flat = _flatten(raw)
        unknown = sorted(set(flat) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(flat)
    cfg = PipelineConfig(**values)
    return cfg.with_overrides(**overrides)


def _flatten(raw: dict[str, Any]) -> dict[str, Any]:
    """Allow either flat keys or one level of [section] grouping."""
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for sub, subval in value.items():
                flat[sub] = subval
        else:
            flat[key] = value
    return flat
