from __future__ import annotations

from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ApiError(BaseModel):
    code: str
    message: str
    retryable: bool = False
    details: dict[str, Any] | None = None


class ErrorResponse(BaseModel):
    error: ApiError


class VariantKind(str, Enum):
    FULL = "full"
    DECOUPLED = "decoupled"
    SHARED_HISTORY = "shared_history"
    TIME_INDEPENDENT = "time_independent"


class Topology(str, Enum):
    SIMILARITY = "similarity"
    PERIODIC = "periodic"
    STAR = "star"


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_entities: int = Field(20, ge=1)
    num_relations: int = Field(3, ge=1)
    num_ticks: int = Field(200, ge=1)
    attr_arity: int = Field(1, ge=1)
    coupling: float = Field(0.7, ge=0.0, le=1.0)
    density: float = Field(0.2, ge=0.0, le=1.0)
    noise: float = Field(0.05, ge=0.0)
    seed: int = 0
    topology: Topology = Topology.SIMILARITY
    period: int = Field(3, ge=1)
    ar_coef: float = Field(0.9, ge=-1.0, le=1.0)

    @model_validator(mode="after")
    def _star_needs_two(self) -> "SynthConfig":
        if self.topology is Topology.STAR and self.num_entities < 2:
            raise ValueError("star topology needs at least two entities")
        return self


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_entities: int = Field(ge=1)
    num_relations: int = Field(ge=1)
    attr_arity: int = Field(1, ge=1)
    embed_dim: int = Field(200, ge=1)
    hidden_dim: int = Field(200, ge=1)
    variant: VariantKind = VariantKind.FULL
    seq_len: int = Field(10, ge=1)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lam: float = Field(1.0, ge=0.0, alias="lambda")
    epochs: int = Field(100, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    seq_len: int = Field(10, ge=1)
    seed: int = 0
    variant: VariantKind = VariantKind.FULL
    checkpoint_dir: str = "checkpoints"
    eval_every: int = Field(1, ge=1)
    batch_size: int = Field(64, ge=1)
    patience: int = Field(20, ge=1)
    clip_norm: float = Field(1.0, gt=0.0)
    embed_dim: int = Field(200, ge=1)
    hidden_dim: int = Field(200, ge=1)


class ForecastConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon: int = Field(1, ge=1)
    top_k: int = Field(5, ge=1)
    queries: list[tuple[int, int]] | None = None

    @field_validator("queries")
    @classmethod
    def _queries_nonempty(cls, value: list[tuple[int, int]] | None):
        if value is not None and not value:
            raise ValueError("query set must be nonempty")
        return value


class NormalizationStats(BaseModel):
    mean: list[float]
    std: list[float]


class TrainLogRecord(BaseModel):
    epoch: int
    loss: float = Field(serialization_alias="L")
    loss_interaction: float = Field(serialization_alias="L_I")
    loss_attribute: float = Field(serialization_alias="L_A")
    val_mse: float | None = None
    wall_time: float
    lam: float = Field(serialization_alias="lambda")
    variant: VariantKind
    seed: int


class EvalReport(BaseModel):
    attribute_mse: float
    attribute_mse_normalized: float
    mrr: float | None = None
    hits: dict[int, float] = Field(default_factory=dict)
    per_entity_mse: dict[str, float] = Field(default_factory=dict)
    baselines: dict[str, float] = Field(default_factory=dict)
    metadata: dict[str, Any] = Field(default_factory=dict)


class CheckpointFile(BaseModel):
    format_version: int
    epoch: int
    config_hash: str
    model: ModelConfig
    normalization: NormalizationStats | None = None
    entities: list[str] = Field(default_factory=list)
    relations: list[str] = Field(default_factory=list)
    params: dict[str, list[Any]]
    shapes: dict[str, list[int]]
    val_mse: float | None = None


class BaselineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: int = Field(1, ge=1, le=2)
    hidden_dim: int = Field(16, ge=1)
    epochs: int = Field(200, ge=1)
    lr: float = Field(1e-2, gt=0.0)
    seq_len: int = Field(10, ge=1)
    seed: int = 0
    clip_norm: float = Field(1.0, gt=0.0)
