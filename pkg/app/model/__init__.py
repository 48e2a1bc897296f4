"""Embeddings, aggregators, history recurrences and prediction heads."""

from app.model.forward import (
    HiddenRows,
    HistoryState,
    attribute_aggregate,
    attribute_aggregates,
    attribute_history,
    entity_embedding,
    interaction_aggregate,
    interaction_aggregates,
    interaction_history,
    predict_attribute,
    predict_attributes,
    roll_windows,
    step_history,
    step_history_batch,
    tail_logits,
    tail_logits_batch,
)
from app.model.gru import GRU_BIASES, GRU_WEIGHTS, gru_cell, gru_param_shapes
from app.model.params import (
    ATTR_TASK,
    LINK_TASK,
    ModelParams,
    config_hash,
    init_params,
    param_shapes,
    zero_params,
)

__all__ = [
    "ATTR_TASK",
    "GRU_BIASES",
    "GRU_WEIGHTS",
    "LINK_TASK",
    "HiddenRows",
    "HistoryState",
    "ModelParams",
    "attribute_aggregate",
    "attribute_aggregates",
    "attribute_history",
    "config_hash",
    "entity_embedding",
    "gru_cell",
    "gru_param_shapes",
    "init_params",
    "interaction_aggregate",
    "interaction_aggregates",
    "interaction_history",
    "param_shapes",
    "predict_attribute",
    "predict_attributes",
    "roll_windows",
    "step_history",
    "step_history_batch",
    "tail_logits",
    "tail_logits_batch",
    "zero_params",
]
