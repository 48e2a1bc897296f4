"""Joint optimization of L = L_I + λ·L_A with validation-based checkpoint selection."""
from __future__ import annotations

import logging
import math
import time
from collections.abc import Collection, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.autodiff import Adam, Tape, Tensor, add, backward, cross_entropy, mse, scale
from app.dataio import DatasetSplit, Snapshot, normalize
from app.inference import one_step_predictions
from app.metrics import primitives
from app.model import (
    HistoryState,
    ModelParams,
    init_params,
    predict_attributes,
    roll_windows,
    tail_logits_batch,
)
from app.schemas import ModelConfig, TrainConfig, TrainLogRecord, VariantKind
from app.store import CheckpointStore, file_sha256

logger = logging.getLogger(__name__)

TRAIN_LOG_FILE = "train_log.jsonl"


@dataclass
class TrainResult:
    params: ModelParams
    best_path: Path | None
    log_path: Path
    best_epoch: int | None
    best_val_mse: float | None
    records: list[TrainLogRecord] = field(default_factory=list)
    initial_loss: float | None = None


def model_config_for(split: DatasetSplit, config: TrainConfig) -> ModelConfig:
    return ModelConfig(
        num_entities=max(1, split.num_entities),
        num_relations=max(1, split.num_relations),
        attr_arity=max(1, split.attr_arity),
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        variant=config.variant,
        seq_len=config.seq_len,
    )


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def compute_loss(
    window: Sequence[Snapshot],
    params: ModelParams,
    lam: float,
    heads: Collection[int] | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """(L, L_I, L_A) for predicting the last snapshot of ``window`` from the rest.

    L_A is the mean squared error over target heads, L_I the summed
    cross-entropy over target events. ``heads`` restricts both to a subset.
    """
    return window_losses([window], params, lam, [heads])[0]


def window_losses(
    windows: Sequence[Sequence[Snapshot]],
    params: ModelParams,
    lam: float,
    heads: Sequence[Collection[int] | None] | None = None,
) -> list[tuple[Tensor, Tensor, Tensor]]:
    """``compute_loss`` for each window; all window prefixes are rolled together."""
    for window in windows:
        if len(window) < 2:
            raise ValueError("WINDOW_TOO_SHORT", {"length": len(window)})
    selections = list(heads) if heads is not None else [None] * len(windows)
    states = roll_windows([w[:-1] for w in windows], params, selections)
    return [
        _target_loss(window[-1], state, params, lam, selected)
        for window, state, selected in zip(windows, states, selections)
    ]


def _target_loss(
    target: Snapshot,
    state: HistoryState,
    params: ModelParams,
    lam: float,
    heads: Collection[int] | None,
) -> tuple[Tensor, Tensor, Tensor]:
    target_heads = sorted(h for h in target.by_head if heads is None or h in heads)
    if not target_heads:
        zero = Tensor(0.0)
        return zero, zero, zero

    predicted = predict_attributes(state, target_heads, params)
    truth = np.stack([target.attributes[h] for h in target_heads])
    loss_attribute = mse(predicted, truth)

    events = [e for h in target_heads for e in target.by_head[h]]
    logits = tail_logits_batch(state, [(e.head, e.relation) for e in events], params)
    loss_interaction = cross_entropy(logits, [e.tail for e in events])
    return add(loss_interaction, scale(loss_attribute, lam)), loss_interaction, loss_attribute


def window_at(sequence: Sequence[Snapshot], target_index: int, seq_len: int) -> list[Snapshot]:
    """Target snapshot plus at most ``seq_len`` snapshots before it."""
    return list(sequence[max(0, target_index - seq_len) : target_index + 1])


def training_examples(sequence: Sequence[Snapshot]) -> list[tuple[int, int]]:
    """(target index, head) pairs; the first snapshot has no history and is never a target."""
    return [(i, h) for i in range(1, len(sequence)) for h in sorted(sequence[i].by_head)]


def training_batches(
    sequence: Sequence[Snapshot], batch_size: int, rng: np.random.Generator
) -> list[list[tuple[int, int]]]:
    """Shuffled mini-batches of whole target snapshots, up to ``batch_size`` heads each.

    A target with more heads than ``batch_size`` forms a batch of its own, so
    every target window is rolled once per epoch.
    """
    targets = [i for i in range(1, len(sequence)) if sequence[i].by_head]
    batches: list[list[tuple[int, int]]] = []
    current: list[tuple[int, int]] = []
    for position in rng.permutation(len(targets)):
        index = targets[position]
        examples = [(index, h) for h in sorted(sequence[index].by_head)]
        if current and len(current) + len(examples) > batch_size:
            batches.append(current)
            current = []
        current.extend(examples)
    if current:
        batches.append(current)
    return batches


def dataset_loss(
    params: ModelParams, sequence: Sequence[Snapshot], lam: float, seq_len: int
) -> tuple[float, float, float]:
    """Loss summed over every target snapshot of ``sequence`` (no tape)."""
    windows = [window_at(sequence, index, seq_len) for index in range(1, len(sequence))]
    total = interaction = attribute = 0.0
    for l, l_i, l_a in window_losses(windows, params, lam):
        total += l.item()
        interaction += l_i.item()
        attribute += l_a.item()
    return total, interaction, attribute


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def evaluate_validation(
    params: ModelParams, split: DatasetSplit, which: str = "valid"
) -> tuple[float, float]:
    """One-step attribute MSE from true history on ``which``: (raw units, normalized units)."""
    targets = split.part(which)
    if not targets:
        raise ValueError("EMPTY_SPLIT", {"split": which})
    results = one_step_predictions(params, split.timeline(), targets, params.config.seq_len)
    diffs = np.concatenate([(r.predicted - r.truth).reshape(-1, r.truth.shape[-1]) for r in results])
    normalized = float(np.mean(diffs * diffs))
    if split.normalizer is None:
        return normalized, normalized
    raw = diffs * split.normalizer.std
    return float(np.mean(raw * raw)), normalized


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _batch_step(
    sequence: Sequence[Snapshot],
    batch: Sequence[tuple[int, int]],
    params: ModelParams,
    optimizer: Adam,
    config: TrainConfig,
) -> tuple[float, float, float]:
    by_target: dict[int, set[int]] = {}
    for index, head in batch:
        by_target.setdefault(index, set()).add(head)

    targets = sorted(by_target)
    with Tape():
        parts = window_losses(
            [window_at(sequence, index, config.seq_len) for index in targets],
            params,
            config.lam,
            [by_target[index] for index in targets],
        )
        total = parts[0][0]
        for loss, _, _ in parts[1:]:
            total = add(total, loss)
        value = total.item()
        if not math.isfinite(value):
            raise ValueError("NON_FINITE_LOSS", {"loss": repr(value)})
        grads = backward(total).for_params(params.tensors)
    optimizer.step(grads)
    return (
        value,
        sum(p[1].item() for p in parts),
        sum(p[2].item() for p in parts),
    )


def train(split: DatasetSplit, config: TrainConfig) -> TrainResult:
    """Train one model; the checkpoint with the lowest validation MSE becomes ``best.json``."""
    if not split.train or not split.valid:
        raise ValueError("EMPTY_SPLIT", {"train": len(split.train), "valid": len(split.valid)})
    data = split if split.normalizer is not None else normalize(split)
    sequence = data.train
    examples = training_examples(sequence)
    if not examples:
        raise ValueError("TOO_FEW_SNAPSHOTS", {"count": len(sequence), "reason": "no training targets"})

    params = init_params(model_config_for(data, config), seed=config.seed)
    optimizer = Adam(params.tensors, lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng([config.seed, 1])
    store = CheckpointStore(config.checkpoint_dir)
    store.root.mkdir(parents=True, exist_ok=True)
    log_path = store.root / TRAIN_LOG_FILE
    log_path.write_text("", encoding="utf-8")

    initial_loss = dataset_loss(params, sequence, config.lam, config.seq_len)[0]
    logger.info(
        "training start variant=%s lambda=%s seed=%d examples=%d initial_loss=%.6g",
        config.variant.value, config.lam, config.seed, len(examples), initial_loss,
    )

    started = time.perf_counter()
    records: list[TrainLogRecord] = []
    best_path: Path | None = None
    best_epoch: int | None = None
    best_val: float | None = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        totals = np.zeros(3)
        batches = 0
        for batch in training_batches(sequence, config.batch_size, rng):
            try:
                totals += _batch_step(sequence, batch, params, optimizer, config)
            except ValueError as exc:
                if exc.args and exc.args[0] in ("NON_FINITE_LOSS", "NON_FINITE_GRADIENT"):
                    logger.error("training aborted epoch=%d best=%s", epoch, best_path)
                    raise ValueError(
                        "NON_FINITE_LOSS",
                        {"epoch": epoch, "best_checkpoint": str(best_path) if best_path else None},
                    ) from exc
                raise
            batches += 1
        totals /= max(1, batches)

        val_mse: float | None = None
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            val_mse, _ = evaluate_validation(params, data, "valid")
            path = store.save(
                params, epoch=epoch, normalizer=data.normalizer, vocab=data.vocab, val_mse=val_mse
            )
            if best_val is None or val_mse < best_val:
                best_val, best_epoch = val_mse, epoch
                best_path = store.mark_best(path)
                stale = 0
            else:
                stale += 1

        record = TrainLogRecord(
            epoch=epoch,
            loss=float(totals[0]),
            loss_interaction=float(totals[1]),
            loss_attribute=float(totals[2]),
            val_mse=val_mse,
            wall_time=time.perf_counter() - started,
            lam=config.lam,
            variant=config.variant,
            seed=config.seed,
        )
        records.append(record)
        with log_path.open("a", encoding="utf-8") as handle:
            handle.write(record.model_dump_json(by_alias=True) + "\n")
        logger.debug("epoch=%d L=%.6g val_mse=%s", epoch, record.loss, val_mse)

        if stale >= config.patience:
            logger.info("early stop epoch=%d best_epoch=%s", epoch, best_epoch)
            break

    logger.info("training done best_epoch=%s best_val_mse=%s path=%s", best_epoch, best_val, best_path)
    return TrainResult(
        params=params,
        best_path=best_path,
        log_path=log_path,
        best_epoch=best_epoch,
        best_val_mse=best_val,
        records=records,
        initial_loss=initial_loss,
    )


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    variant: VariantKind
    seed: int
    val_mse: float
    test_mse: float
    checkpoint_sha256: str | None


def _ablation_run(split: DatasetSplit, config: TrainConfig) -> AblationRow:
    result = train(split, config)
    best = result.params
    if result.best_path is not None:
        best = CheckpointStore(config.checkpoint_dir).load(result.best_path)[0]
    data = split if split.normalizer is not None else normalize(split)
    val_mse, _ = evaluate_validation(best, data, "valid")
    test_mse, _ = evaluate_validation(best, data, "test") if data.test else (float("nan"), 0.0)
    return AblationRow(
        variant=config.variant,
        seed=config.seed,
        val_mse=val_mse,
        test_mse=test_mse,
        checkpoint_sha256=file_sha256(result.best_path) if result.best_path else None,
    )


def run_ablation(
    split: DatasetSplit,
    base_config: TrainConfig,
    seeds: Sequence[int],
    workers: int = 1,
    variants: Sequence[VariantKind] = tuple(VariantKind),
) -> list[AblationRow]:
    """Train every variant for every seed; each run gets its own checkpoint directory."""
    root = Path(base_config.checkpoint_dir)
    data = split if split.normalizer is not None else normalize(split)
    configs = [
        base_config.model_copy(
            update={
                "variant": variant,
                "seed": seed,
                "checkpoint_dir": str(root / variant.value / f"seed_{seed}"),
            }
        )
        for variant in variants
        for seed in seeds
    ]
    if workers <= 1:
        return [_ablation_run(data, c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: _ablation_run(data, c), configs))


def ablation_table(rows: Sequence[AblationRow]) -> list[dict[str, object]]:
    """One row per variant with median validation/test MSE across seeds."""
    table = []
    for variant in VariantKind:
        runs = [r for r in rows if r.variant is variant]
        if not runs:
            continue
        table.append(
            {
                "variant": variant.value,
                "seeds": len(runs),
                "val_mse": primitives.median(r.val_mse for r in runs),
                "test_mse": primitives.median(r.test_mse for r in runs),
            }
        )
    return table
