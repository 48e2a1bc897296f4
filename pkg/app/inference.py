"""History warm-up, one-step prediction from true history and multi-step forecasting."""
from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.autodiff import softmax
from app.dataio import Event, Normalizer, Snapshot, Vocabulary, serialize_events
from app.model import (
    HistoryState,
    ModelParams,
    predict_attributes,
    roll_windows,
    step_history,
    tail_logits,
    tail_logits_batch,
)
from app.schemas import ForecastConfig

logger = logging.getLogger(__name__)

FORECAST_EVENTS_FILE = "forecast.tsv"
FORECAST_ATTRIBUTES_FILE = "forecast_attributes.json"


@dataclass(frozen=True, eq=False)
class RankedTails:
    entities: np.ndarray
    probabilities: np.ndarray


@dataclass(frozen=True, eq=False)
class OneStepResult:
    tick: int
    entities: list[int]
    predicted: np.ndarray
    truth: np.ndarray
    queries: list[tuple[int, int, int]]
    ranks: list[int]


@dataclass(frozen=True, eq=False)
class ForecastStep:
    tick: int
    snapshot: Snapshot
    attributes: np.ndarray  # (num_entities, k), model units
    rankings: dict[tuple[int, int], RankedTails]


def _order(probabilities: np.ndarray) -> np.ndarray:
    # stable sort keeps ascending entity id among equal probabilities
    return np.argsort(-probabilities, kind="stable")


def rank_tails(state: HistoryState, h: int, r: int, params: ModelParams) -> RankedTails:
    probabilities = softmax(tail_logits(state, h, r, params).values)
    order = _order(probabilities)
    return RankedTails(entities=order, probabilities=probabilities[order])


def rank_of(probabilities: np.ndarray, tail: int) -> int:
    """1-based position of ``tail`` in the deterministic ranking."""
    target = probabilities[tail]
    ahead = np.count_nonzero(probabilities > target)
    ties_before = np.count_nonzero(probabilities[:tail] == target)
    return int(ahead + ties_before + 1)


def warm_state(
    snapshots: Sequence[Snapshot], params: ModelParams, seq_len: int | None = None
) -> HistoryState:
    """Roll histories over the last ``seq_len`` snapshots from an empty state."""
    return warm_states([snapshots], params, seq_len)[0]


def warm_states(
    histories: Sequence[Sequence[Snapshot]], params: ModelParams, seq_len: int | None = None
) -> list[HistoryState]:
    """``warm_state`` for several histories at once."""
    windows = [list(h)[-seq_len:] if seq_len else list(h) for h in histories]
    return [state.detached() for state in roll_windows(windows, params)]


def one_step_predictions(
    params: ModelParams,
    sequence: Sequence[Snapshot],
    targets: Sequence[Snapshot],
    seq_len: int | None = None,
) -> list[OneStepResult]:
    """One-step evaluation: each target is predicted from true history before it."""
    seq_len = seq_len if seq_len is not None else params.config.seq_len
    ordered = sorted(sequence, key=lambda s: s.timestamp)
    results: list[OneStepResult] = []
    histories = [[s for s in ordered if s.timestamp < target.timestamp] for target in targets]
    for target, state in zip(targets, warm_states(histories, params, seq_len)):
        entities = sorted(target.attributes)
        predicted = predict_attributes(state, entities, params).values
        truth = np.stack([target.attributes[e] for e in entities])
        queries = [(e.head, e.relation, e.tail) for e in target.events]
        ranks: list[int] = []
        if queries:
            logits = tail_logits_batch(state, [(h, r) for h, r, _ in queries], params).values
            for row_logits, (_, _, tail) in zip(logits, queries):
                ranks.append(rank_of(softmax(row_logits), tail))
        results.append(
            OneStepResult(
                tick=target.timestamp,
                entities=entities,
                predicted=predicted,
                truth=truth,
                queries=queries,
                ranks=ranks,
            )
        )
    return results


def default_queries(history: Sequence[Snapshot]) -> list[tuple[int, int]]:
    if not history:
        return []
    return sorted({(e.head, e.relation) for e in history[-1].events})


def forecast(
    history: Sequence[Snapshot],
    state: HistoryState | None,
    params: ModelParams,
    config: ForecastConfig,
) -> tuple[list[ForecastStep], HistoryState]:
    """Roll the model forward ``config.horizon`` ticks on its own predictions.

    Nothing after the last history snapshot is read. Returns the steps and
    the final state so a forecast can be continued.
    """
    if config.horizon < 1:
        raise ValueError("INVALID_HORIZON", {"horizon": config.horizon})
    if state is None:
        state = warm_state(history, params, params.config.seq_len)
    queries = list(config.queries) if config.queries else default_queries(history)
    if not queries:
        raise ValueError("INVALID_CONFIG", {"reason": "empty query set"})
    tick = state.current_tick
    if tick is None:
        tick = history[-1].timestamp if history else -1

    everyone = list(range(params.config.num_entities))
    top_k = min(config.top_k, params.config.num_entities)
    steps: list[ForecastStep] = []
    for _ in range(config.horizon):
        attributes = predict_attributes(state, everyone, params).values
        logits = tail_logits_batch(state, queries, params).values
        rankings: dict[tuple[int, int], RankedTails] = {}
        events: list[Event] = []
        for (h, r), row_logits in zip(queries, logits):
            probabilities = softmax(row_logits)
            order = _order(probabilities)
            rankings[(h, r)] = RankedTails(entities=order, probabilities=probabilities[order])
            for t in order[:top_k]:
                t = int(t)
                events.append(
                    Event(h, r, t, tuple(attributes[h].tolist()), tuple(attributes[t].tolist()), tick + 1)
                )
        tick += 1
        snapshot = Snapshot.from_events(tick, events)
        state = step_history(snapshot, state, params).detached()
        steps.append(ForecastStep(tick=tick, snapshot=snapshot, attributes=attributes, rankings=rankings))
        logger.debug("forecast step tick=%d events=%d", tick, len(events))
    return steps, state


def write_forecast(
    steps: Sequence[ForecastStep],
    out_dir: str | Path,
    vocab: Vocabulary | None = None,
    normalizer: Normalizer | None = None,
) -> tuple[Path, Path]:
    """Write predicted events (TSV, raw units) and per-step entity attributes (JSON)."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    def raw(values: Sequence[float] | np.ndarray) -> np.ndarray:
        array = np.asarray(values, dtype=np.float64)
        return normalizer.inverse(array) if normalizer is not None else array

    events = [
        Event(
            e.head,
            e.relation,
            e.tail,
            tuple(raw(e.attr_head).tolist()),
            tuple(raw(e.attr_tail).tolist()),
            e.timestamp,
        )
        for step in steps
        for e in step.snapshot.events
    ]
    events_path = serialize_events(events, root / FORECAST_EVENTS_FILE, vocab, header=("predicted=true",))

    names = vocab.entities if vocab is not None and vocab.entities else None
    attributes: dict[str, list[list[float]]] = {}
    for step in steps:
        restored = raw(step.attributes)
        for entity, vector in enumerate(restored):
            key = names[entity] if names is not None and entity < len(names) else str(entity)
            attributes.setdefault(key, []).append(vector.tolist())
    payload = {
        "ticks": [vocab.tick_label(s.tick) if vocab is not None else s.tick for s in steps],
        "attributes": attributes,
    }
    attributes_path = root / FORECAST_ATTRIBUTES_FILE
    attributes_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return events_path, attributes_path
