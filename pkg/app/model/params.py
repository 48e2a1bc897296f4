from __future__ import annotations

import hashlib
import json
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from app.autodiff import Tensor
from app.model.gru import gru_param_shapes
from app.schemas import ModelConfig, VariantKind

ATTR_TASK = "attr"
LINK_TASK = "link"


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name → shape for every learnable array of the configured variant."""
    n, r, k = config.num_entities, config.num_relations, config.attr_arity
    d, m = config.embed_dim, config.hidden_dim
    variant = config.variant
    shapes: dict[str, tuple[int, ...]] = {}

    if variant is VariantKind.DECOUPLED:
        for task in (ATTR_TASK, LINK_TASK):
            shapes[f"entity_static.{task}"] = (n, d)
            # attr_proj.link is allocated but never read: interaction messages ignore attributes
            shapes[f"attr_proj.{task}"] = (k, d)
    elif variant is VariantKind.TIME_INDEPENDENT:
        shapes["entity_static"] = (n, d)
    else:
        shapes["entity_static"] = (n, d)
        shapes["attr_proj"] = (k, d)
    shapes["relation_table"] = (r, d)

    if variant is VariantKind.TIME_INDEPENDENT:
        shapes["head_a.w"] = (d, k)
        shapes["head_a.b"] = (k,)
        shapes["head_i.w"] = (2 * d, n)
        shapes["head_i.b"] = (n,)
        return shapes

    shapes["w2"] = (3 * d, d)
    if variant is not VariantKind.SHARED_HISTORY:
        shapes["w3"] = (2 * d, d)
    shapes.update(gru_param_shapes("gru_a", 3 * d, m))
    if variant is not VariantKind.SHARED_HISTORY:
        shapes.update(gru_param_shapes("gru_i", 4 * d, m))
    shapes["head_a.w"] = (m + d, k)
    shapes["head_a.b"] = (k,)
    shapes["head_i.w"] = (m + 2 * d, n)
    shapes["head_i.b"] = (n,)
    return shapes


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor]

    @property
    def variant(self) -> VariantKind:
        return self.config.variant

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def static(self, task: str) -> Tensor:
        """Static entity table c_h used by ``task`` (``attr`` or ``link``)."""
        if self.variant is VariantKind.DECOUPLED:
            return self.tensors[f"entity_static.{task}"]
        return self.tensors["entity_static"]

    def attr_proj(self, task: str) -> Tensor:
        if self.variant is VariantKind.DECOUPLED:
            return self.tensors[f"attr_proj.{task}"]
        return self.tensors["attr_proj"]

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config.model_copy(),
            tensors={
                name: Tensor(t.values.copy(), requires_grad=True, name=name)
                for name, t in self.tensors.items()
            },
        )

    def values(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self.tensors.items()}


def _xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Xavier-uniform matrices, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        values = np.zeros(shape) if len(shape) == 1 else _xavier_uniform(rng, shape)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    return ModelParams(config=config, tensors=tensors)


def zero_params(config: ModelConfig) -> ModelParams:
    tensors = {
        name: Tensor(np.zeros(shape), requires_grad=True, name=name)
        for name, shape in param_shapes(config).items()
    }
    return ModelParams(config=config, tensors=tensors)


def config_hash(config: ModelConfig) -> str:
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
