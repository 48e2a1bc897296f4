from __future__ import annotations

import hashlib
import json
import logging
import shutil
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.autodiff import Tensor
from app.dataio import Normalizer, Vocabulary
from app.model.params import ModelParams, config_hash, param_shapes
from app.schemas import CheckpointFile, ModelConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BEST_FILE = "best.json"


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _encode(payload: CheckpointFile) -> str:
    # json writes floats with repr, which round-trips float64 exactly
    return json.dumps(payload.model_dump(mode="json"), sort_keys=True, separators=(",", ":")) + "\n"


def to_checkpoint(
    params: ModelParams,
    *,
    epoch: int,
    normalizer: Normalizer | None = None,
    vocab: Vocabulary | None = None,
    val_mse: float | None = None,
) -> CheckpointFile:
    return CheckpointFile(
        format_version=FORMAT_VERSION,
        epoch=epoch,
        config_hash=config_hash(params.config),
        model=params.config,
        normalization=normalizer.to_stats() if normalizer is not None else None,
        entities=list(vocab.entities) if vocab is not None else [],
        relations=list(vocab.relations) if vocab is not None else [],
        params={name: t.values.tolist() for name, t in params.tensors.items()},
        shapes={name: list(t.shape) for name, t in params.tensors.items()},
        val_mse=val_mse,
    )


def from_checkpoint(payload: CheckpointFile, expected: ModelConfig | None = None) -> ModelParams:
    """Rebuild parameters, rejecting any dimension disagreement."""
    config = payload.model
    if expected is not None:
        for key in ("num_entities", "num_relations", "attr_arity", "embed_dim", "hidden_dim", "variant"):
            if getattr(expected, key) != getattr(config, key):
                raise ValueError(
                    "CHECKPOINT_MISMATCH",
                    {"field": key, "expected": str(getattr(expected, key)), "found": str(getattr(config, key))},
                )
    if payload.config_hash != config_hash(config):
        raise ValueError("CHECKPOINT_MISMATCH", {"field": "config_hash"})
    shapes = param_shapes(config)
    if set(shapes) != set(payload.params):
        raise ValueError(
            "CHECKPOINT_MISMATCH",
            {"missing": sorted(set(shapes) - set(payload.params)), "extra": sorted(set(payload.params) - set(shapes))},
        )
    tensors: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        values = np.asarray(payload.params[name], dtype=np.float64)
        if values.shape != shape:
            raise ValueError(
                "CHECKPOINT_MISMATCH", {"param": name, "expected": list(shape), "found": list(values.shape)}
            )
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    return ModelParams(config=config, tensors=tensors)


def read_checkpoint(path: str | Path) -> CheckpointFile:
    checkpoint_path = Path(path)
    if not checkpoint_path.is_file():
        raise ValueError("CHECKPOINT_NOT_FOUND", {"path": str(checkpoint_path)})
    try:
        return CheckpointFile.model_validate_json(checkpoint_path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ValueError("CHECKPOINT_MISMATCH", {"path": str(checkpoint_path), "reason": str(exc)}) from exc


def load_checkpoint(
    path: str | Path, expected: ModelConfig | None = None
) -> tuple[ModelParams, CheckpointFile]:
    payload = read_checkpoint(path)
    return from_checkpoint(payload, expected), payload


class CheckpointStore:
    """Directory of ``epoch_XXXX.json`` checkpoints plus a ``best.json`` copy."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def path_for(self, epoch: int) -> Path:
        return self.root / f"epoch_{epoch:04d}.json"

    def best_path(self) -> Path:
        return self.root / BEST_FILE

    def save(
        self,
        params: ModelParams,
        *,
        epoch: int,
        normalizer: Normalizer | None = None,
        vocab: Vocabulary | None = None,
        val_mse: float | None = None,
    ) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(epoch)
        payload = to_checkpoint(params, epoch=epoch, normalizer=normalizer, vocab=vocab, val_mse=val_mse)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(_encode(payload), encoding="utf-8")
        tmp.replace(path)
        logger.debug("checkpoint saved path=%s epoch=%d", path, epoch)
        return path

    def mark_best(self, path: str | Path) -> Path:
        best = self.best_path()
        shutil.copyfile(path, best)
        logger.info("best checkpoint path=%s sha256=%s", path, file_sha256(best)[:12])
        return best

    def load(self, path: str | Path | None = None, expected: ModelConfig | None = None) -> tuple[ModelParams, CheckpointFile]:
        return load_checkpoint(path if path is not None else self.best_path(), expected)

    def has_best(self) -> bool:
        return self.best_path().is_file()
