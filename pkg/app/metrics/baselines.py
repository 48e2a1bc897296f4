"""Graph-blind baselines: historic average and a recurrent model over attribute history alone."""
from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence

import numpy as np

from app.autodiff import Adam, Tape, Tensor, add, affine, backward, mse, scale
from app.model.gru import gru_cell, gru_param_shapes
from app.schemas import BaselineConfig

logger = logging.getLogger(__name__)

Series = Mapping[int, Sequence[np.ndarray]]


def global_mean(series: Series) -> np.ndarray:
    observations = [np.asarray(v, dtype=np.float64) for values in series.values() for v in values]
    if not observations:
        raise ValueError("EMPTY_SERIES", {"entities": len(series)})
    return np.mean(np.stack(observations), axis=0)


def historic_average(
    series: Series, horizon: int = 1, entities: Sequence[int] = ()
) -> dict[int, np.ndarray]:
    """Per-entity training mean repeated over ``horizon`` rows.

    Entities listed in ``entities`` but absent from ``series`` get the global mean.
    """
    fallback = global_mean(series)
    predictions: dict[int, np.ndarray] = {}
    for entity, values in series.items():
        level = np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in values]), axis=0) if values else fallback
        predictions[entity] = np.tile(level, (horizon, 1))
    for entity in entities:
        if entity not in predictions:
            predictions[entity] = np.tile(fallback, (horizon, 1))
    return predictions


class NoGraphGru:
    """Shared GRU run over each entity's own attribute history, 1 or 2 stacked layers."""

    def __init__(self, arity: int, config: BaselineConfig) -> None:
        self.arity = arity
        self.config = config
        rng = np.random.default_rng(config.seed)
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in range(config.layers):
            input_dim = arity if layer == 0 else config.hidden_dim
            shapes.update(gru_param_shapes(f"layer{layer}", input_dim, config.hidden_dim))
        shapes["head.w"] = (config.hidden_dim, arity)
        shapes["head.b"] = (arity,)
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            if len(shape) == 1:
                values = np.zeros(shape)
            else:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                values = rng.uniform(-limit, limit, size=shape)
            self.params[name] = Tensor(values, requires_grad=True, name=name)

    def _run(self, windows: np.ndarray) -> Tensor:
        """windows: (n, steps, k) → next-value predictions (n, k)."""
        n = windows.shape[0]
        hidden = [Tensor(np.zeros((n, self.config.hidden_dim))) for _ in range(self.config.layers)]
        for step in range(windows.shape[1]):
            x: Tensor = Tensor(windows[:, step, :])
            for layer in range(self.config.layers):
                hidden[layer] = gru_cell(x, hidden[layer], self.params, f"layer{layer}")
                x = hidden[layer]
        return affine(hidden[-1], self.params["head.w"], self.params["head.b"])

    def _windows(self, series: Series) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Training windows grouped by history length."""
        grouped: dict[int, tuple[list[np.ndarray], list[np.ndarray]]] = {}
        for values in series.values():
            stacked = np.stack([np.asarray(v, dtype=np.float64) for v in values]) if values else None
            if stacked is None:
                continue
            for i in range(1, stacked.shape[0]):
                lo = max(0, i - self.config.seq_len)
                inputs, targets = grouped.setdefault(i - lo, ([], []))
                inputs.append(stacked[lo:i])
                targets.append(stacked[i])
        return {
            length: (np.stack(inputs), np.stack(targets))
            for length, (inputs, targets) in sorted(grouped.items())
        }

    def fit(self, series: Series) -> list[float]:
        """Full-batch training; returns the per-epoch loss curve."""
        groups = self._windows(series)
        if not groups:
            raise ValueError("EMPTY_SERIES", {"reason": "no series has two observations"})
        total_windows = sum(targets.shape[0] for _, targets in groups.values())
        optimizer = Adam(self.params, lr=self.config.lr, clip_norm=self.config.clip_norm)
        losses: list[float] = []
        for _ in range(self.config.epochs):
            with Tape():
                total: Tensor | None = None
                for inputs, targets in groups.values():
                    term = scale(mse(self._run(inputs), targets), targets.shape[0] / total_windows)
                    total = term if total is None else add(total, term)
                loss_value = total.item()
                grads = backward(total).for_params(self.params)
            if not math.isfinite(loss_value):
                raise ValueError("NON_FINITE_LOSS", {"model": "nograph_gru"})
            optimizer.step(grads)
            losses.append(loss_value)
        logger.debug("nograph gru fitted layers=%d final_loss=%.6g", self.config.layers, losses[-1])
        return losses

    def predict_next(self, history: Sequence[np.ndarray]) -> np.ndarray:
        """One-step prediction from the last ``seq_len`` observations of one entity."""
        if not history:
            raise ValueError("EMPTY_SERIES", {"reason": "no history"})
        window = np.stack([np.asarray(v, dtype=np.float64) for v in history[-self.config.seq_len :]])
        return self._run(window[None, :, :]).values[0]


def nograph_gru_baseline(series: Series, config: BaselineConfig, arity: int | None = None) -> NoGraphGru:
    """Fit a graph-blind GRU on per-entity attribute histories."""
    if arity is None:
        arity = int(global_mean(series).shape[0])
    model = NoGraphGru(arity, config)
    model.fit(series)
    return model
