"""Run configuration: JSON-backed, validated, and hashable for audit trails."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    lm_dim: int = 64
    lm_blocks: int = 2
    lm_heads: int = 2
    context_length: int = 256
    mol_dim: int = 32
    mol_layers: int = 3
    protein_dim: int = 32
    protein_layers: int = 2
    protein_heads: int = 2
    max_residues: int = 512


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    steps: int = 100
    warmup_fraction: float = 0.03
    seed: int = 0


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs/default"
    tokenizer_file: str | None = None
    lm_corpus: str | None = None
    molecule_qa: str | None = None
    protein_qa: str | None = None
    text_qa: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        m, o = self.model, self.optimizer
        checks = [
            (m.vocab_size >= 263, "vocab_size must cover the 263 base ids"),
            (m.lm_dim > 0 and m.mol_dim > 0 and m.protein_dim > 0, "dims must be positive"),
            (m.lm_blocks > 0 and m.mol_layers > 0 and m.protein_layers > 0,
             "layer counts must be positive"),
            (m.lm_dim % m.lm_heads == 0, "lm_dim must divide evenly into lm_heads"),
            (m.protein_dim % m.protein_heads == 0,
             "protein_dim must divide evenly into protein_heads"),
            (m.context_length >= 2, "context_length must be at least 2"),
            (m.max_residues >= 1, "max_residues must be positive"),
            (o.learning_rate >= 0, "learning_rate must be non-negative"),
            (o.batch_size >= 1, "batch_size must be positive"),
            (o.steps >= 1, "steps must be positive"),
            (0 <= o.warmup_fraction <= 1, "warmup_fraction must lie in [0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        def build(dc_cls, data, name):
            if not isinstance(data, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f for f in dc_cls.__dataclass_fields__}
            unknown = set(data) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
            return dc_cls(**data)

        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(payload) - {"model", "optimizer", "paths"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        return cls(
            model=build(ModelConfig, payload.get("model", {}), "model"),
            optimizer=build(OptimizerConfig, payload.get("optimizer", {}), "optimizer"),
            paths=build(PathsConfig, payload.get("paths", {}), "paths"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err.msg}") from err
        return cls.from_dict(payload)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def config_hash(self) -> str:
        """Stable hex digest of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, optimizer=replace(self.optimizer, seed=seed))
