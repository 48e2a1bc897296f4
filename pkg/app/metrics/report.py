from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from app.dataio import DatasetSplit, Normalizer, entity_series, normalize
from app.inference import one_step_predictions
from app.metrics import calculators
from app.metrics.baselines import historic_average, nograph_gru_baseline
from app.model import ModelParams
from app.schemas import BaselineConfig, EvalReport

logger = logging.getLogger(__name__)


def _prepare(split: DatasetSplit, normalizer: Normalizer | None) -> DatasetSplit:
    if split.normalizer is not None:
        return split
    return normalize(split, normalizer)


def _history_before(series: dict[int, list[tuple[int, np.ndarray]]], entity: int, tick: int) -> list[np.ndarray]:
    return [value for t, value in series.get(entity, []) if t < tick]


def evaluate_model(
    params: ModelParams,
    split: DatasetSplit,
    which: str = "test",
    *,
    normalizer: Normalizer | None = None,
    baselines: bool = False,
    baseline_config: BaselineConfig | None = None,
    hits_at: Sequence[int] = calculators.DEFAULT_HITS_AT,
    metadata: dict[str, object] | None = None,
) -> EvalReport:
    """One-step evaluation from true history of ``which`` in raw and normalized units."""
    data = _prepare(split, normalizer)
    scaler = data.normalizer
    targets = data.part(which)
    if not targets:
        raise ValueError("EMPTY_SPLIT", {"split": which})
    results = one_step_predictions(params, data.timeline(), targets, params.config.seq_len)

    predicted: dict[tuple[int, int], np.ndarray] = {}
    truth: dict[tuple[int, int], np.ndarray] = {}
    predicted_raw: dict[tuple[int, int], np.ndarray] = {}
    truth_raw: dict[tuple[int, int], np.ndarray] = {}
    ranks: list[int] = []
    for result in results:
        for entity, p, t in zip(result.entities, result.predicted, result.truth):
            key = (entity, result.tick)
            predicted[key], truth[key] = p, t
            predicted_raw[key] = scaler.inverse(p) if scaler is not None else p
            truth_raw[key] = scaler.inverse(t) if scaler is not None else t
        ranks.extend(result.ranks)

    mrr: float | None = None
    hits: dict[int, float] = {}
    if ranks:
        mrr, hits = calculators.metrics_from_ranks(ranks, hits_at)

    names = data.vocab.entities
    per_entity = {
        (names[e] if e < len(names) else str(e)): value
        for e, value in calculators.per_entity_mse(predicted_raw, truth_raw).items()
    }

    report = EvalReport(
        attribute_mse=calculators.attribute_mse(predicted_raw, truth_raw),
        attribute_mse_normalized=calculators.attribute_mse(predicted, truth),
        mrr=mrr,
        hits=hits,
        per_entity_mse=per_entity,
        metadata={
            "split": which,
            "variant": params.variant.value,
            "seq_len": params.config.seq_len,
            "horizon": 1,
            "targets": len(targets),
            **(metadata or {}),
        },
    )
    if baselines:
        report.baselines = baseline_mse(data, truth_raw, baseline_config or BaselineConfig())
    logger.info(
        "evaluation split=%s mse=%.6g mrr=%s baselines=%s",
        which, report.attribute_mse, mrr, report.baselines,
    )
    return report


def baseline_mse(
    data: DatasetSplit,
    truth_raw: dict[tuple[int, int], np.ndarray],
    config: BaselineConfig,
) -> dict[str, float]:
    """Raw-unit MSE of the graph-blind baselines on the same (entity, tick) keys."""
    scaler = data.normalizer
    train_series = {e: [v for _, v in obs] for e, obs in entity_series(data.train).items()}
    entities = sorted({e for e, _ in truth_raw})

    average = historic_average(train_series, horizon=1, entities=entities)
    ha = {key: average[key[0]][0] for key in truth_raw}
    if scaler is not None:
        ha = {key: scaler.inverse(value) for key, value in ha.items()}
    scores = {"historic_average": calculators.attribute_mse(ha, truth_raw)}

    full_series = entity_series(data.timeline())
    for layers in (1, 2):
        gru = nograph_gru_baseline(
            train_series, config.model_copy(update={"layers": layers}), arity=data.attr_arity
        )
        predictions = {}
        for entity, tick in truth_raw:
            history = _history_before(full_series, entity, tick)
            value = gru.predict_next(history) if history else average[entity][0]
            predictions[(entity, tick)] = scaler.inverse(value) if scaler is not None else value
        scores[f"nograph_gru_{layers}layer"] = calculators.attribute_mse(predictions, truth_raw)
    return scores
