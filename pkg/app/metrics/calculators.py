"""Attribute and link metrics over prediction/ground-truth pairs only."""
from __future__ import annotations

import csv
from collections.abc import Hashable, Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from app.metrics import primitives

DEFAULT_HITS_AT = (1, 3, 10)


def attribute_mse(
    predictions: Mapping[Hashable, Sequence[float] | np.ndarray],
    truth: Mapping[Hashable, Sequence[float] | np.ndarray],
) -> float:
    """Mean squared error over every aligned key and attribute dimension."""
    keys = [key for key in predictions if key in truth]
    if not keys:
        raise ValueError("EMPTY_ALIGNMENT", {"predictions": len(predictions), "truth": len(truth)})
    diffs = np.concatenate(
        [
            np.asarray(predictions[key], dtype=np.float64).reshape(-1)
            - np.asarray(truth[key], dtype=np.float64).reshape(-1)
            for key in keys
        ]
    )
    return float(np.mean(diffs * diffs))


def per_entity_mse(
    predictions: Mapping[tuple[int, int], Sequence[float] | np.ndarray],
    truth: Mapping[tuple[int, int], Sequence[float] | np.ndarray],
) -> dict[int, float]:
    """MSE per entity over (entity, tick) keys."""
    grouped: dict[int, list[float]] = {}
    for key, predicted in predictions.items():
        if key not in truth:
            continue
        diff = np.asarray(predicted, dtype=np.float64) - np.asarray(truth[key], dtype=np.float64)
        grouped.setdefault(key[0], []).extend((diff * diff).reshape(-1).tolist())
    return {entity: float(np.mean(values)) for entity, values in sorted(grouped.items())}


def metrics_from_ranks(
    ranks: Iterable[int], hits_at: Sequence[int] = DEFAULT_HITS_AT
) -> tuple[float, dict[int, float]]:
    ranks_list = list(ranks)
    if not ranks_list:
        raise ValueError("MISSING_RANKING", {"queries": 0})
    mrr = primitives.mean(1.0 / r for r in ranks_list) or 0.0
    hits = {k: sum(1 for r in ranks_list if r <= k) / len(ranks_list) for k in sorted(hits_at)}
    return mrr, hits


def link_metrics(
    rankings: Mapping[Hashable, Sequence[int]],
    ground_truth: Iterable[tuple[Hashable, int]],
    hits_at: Sequence[int] = DEFAULT_HITS_AT,
) -> tuple[float, dict[int, float]]:
    """Raw (unfiltered) MRR and Hits@k.

    ``rankings`` maps a query key to its entity ids, best first;
    ``ground_truth`` yields (query key, true tail).
    """
    ranks: list[int] = []
    for key, tail in ground_truth:
        ranking = rankings.get(key)
        if ranking is None:
            raise ValueError("MISSING_RANKING", {"query": repr(key)})
        positions = np.flatnonzero(np.asarray(ranking) == tail)
        if positions.size == 0:
            raise ValueError("MISSING_RANKING", {"query": repr(key), "tail": tail})
        ranks.append(int(positions[0]) + 1)
    return metrics_from_ranks(ranks, hits_at)


def write_per_entity_csv(per_entity: Mapping[str, float], path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["entity", "mse"])
        for entity, value in per_entity.items():
            writer.writerow([entity, repr(float(value))])
    return target
