"""Forward computation over snapshots.

Every function here is evaluated for a batch of heads at once; the
single-entity functions are thin views used by tests and inference.
Histories are immutable: ``step_history`` returns a new ``HistoryState``.
``step_history_batch`` advances several independent histories (lanes), for
example the windows of one training mini-batch, with one primitive call per
stage instead of one per lane.
"""
from __future__ import annotations

from collections.abc import Collection, Hashable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np

from app.autodiff import (
    Tensor,
    active_tape,
    affine,
    as_tensor,
    concat,
    concat_rows,
    gather,
    matmul,
    row,
    segment_mean,
    stack,
)
from app.dataio import Snapshot
from app.model.gru import gru_cell
from app.model.params import ATTR_TASK, LINK_TASK, ModelParams
from app.schemas import VariantKind

K = TypeVar("K", bound=Hashable)


class _Slot:
    """A hidden vector: row ``index`` of ``matrix``, or a standalone vector."""

    __slots__ = ("matrix", "index", "_vector")

    def __init__(self, matrix: Tensor | None, index: int = 0, vector: Tensor | None = None) -> None:
        self.matrix = matrix
        self.index = index
        self._vector = vector

    def vector(self) -> Tensor:
        if self._vector is None:
            assert self.matrix is not None
            tape = self.matrix.tape
            if tape is None or active_tape() is tape:
                self._vector = row(self.matrix, self.index)
            else:
                # the row belongs on the tape that produced the matrix
                with tape:
                    self._vector = row(self.matrix, self.index)
        return self._vector


class HiddenRows(Mapping[K, Tensor]):
    """Hidden vectors by key. Rows written by one step share that step's output matrix."""

    __slots__ = ("_slots",)

    def __init__(self, slots: Mapping[K, _Slot] | None = None) -> None:
        self._slots: dict[K, _Slot] = dict(slots or {})

    @classmethod
    def of(cls, values: Mapping[K, Tensor] | None) -> "HiddenRows[K]":
        if isinstance(values, HiddenRows):
            return values
        return cls({key: _Slot(None, vector=as_tensor(v)) for key, v in (values or {}).items()})

    def __getitem__(self, key: K) -> Tensor:
        return self._slots[key].vector()

    def __iter__(self) -> Iterator[K]:
        return iter(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, key: object) -> bool:
        return key in self._slots

    def slot(self, key: K) -> _Slot | None:
        return self._slots.get(key)

    def updated(self, keys: Sequence[K], matrix: Tensor, offset: int = 0) -> "HiddenRows[K]":
        """Copy where ``keys[i]`` now reads row ``offset + i`` of ``matrix``."""
        slots = dict(self._slots)
        for position, key in enumerate(keys):
            slots[key] = _Slot(matrix, offset + position)
        return HiddenRows(slots)

    def detached(self) -> "HiddenRows[K]":
        copies: dict[int, Tensor] = {}
        slots: dict[K, _Slot] = {}
        for key, slot in self._slots.items():
            if slot.matrix is None:
                slots[key] = _Slot(None, vector=slot.vector().detach())
            elif not slot.matrix.requires_grad:
                slots[key] = slot
            else:
                matrix = copies.get(id(slot.matrix))
                if matrix is None:
                    matrix = copies[id(slot.matrix)] = slot.matrix.detach()
                slots[key] = _Slot(matrix, slot.index)
        return HiddenRows(slots)


def _read_rows(slots: Sequence[_Slot | None], width: int) -> Tensor:
    """Matrix whose i-th row is slot i's vector; a missing slot reads as zeros."""
    groups: dict[int, tuple[Tensor, list[int], list[int]]] = {}
    loose: list[Tensor] = []
    loose_positions: list[int] = []
    missing: list[int] = []
    for position, slot in enumerate(slots):
        if slot is None:
            missing.append(position)
        elif slot.matrix is None:
            loose.append(slot.vector())
            loose_positions.append(position)
        else:
            _, indices, positions = groups.setdefault(id(slot.matrix), (slot.matrix, [], []))
            indices.append(slot.index)
            positions.append(position)

    if not groups and not loose:
        return Tensor(np.zeros((len(slots), width)))
    if len(groups) == 1 and not loose and not missing:
        ((matrix, indices, _),) = groups.values()
        return gather(matrix, indices)

    blocks: list[Tensor] = []
    order = np.empty(len(slots), dtype=np.int64)
    offset = 0
    for matrix, indices, positions in groups.values():
        blocks.append(gather(matrix, indices))
        order[positions] = np.arange(offset, offset + len(indices))
        offset += len(indices)
    if loose:
        blocks.append(stack(*loose))
        order[loose_positions] = np.arange(offset, offset + len(loose))
        offset += len(loose)
    if missing:
        blocks.append(Tensor(np.zeros((1, width))))
        order[missing] = offset
    return gather(concat_rows(*blocks), order)


@dataclass(frozen=True, eq=False)
class HistoryState:
    """H_A by entity and H_I by (head, relation); plain mappings are accepted and wrapped."""

    h_a: HiddenRows[int] = field(default_factory=HiddenRows)
    h_i: HiddenRows[tuple[int, int]] = field(default_factory=HiddenRows)
    current_tick: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "h_a", HiddenRows.of(self.h_a))
        object.__setattr__(self, "h_i", HiddenRows.of(self.h_i))

    @classmethod
    def empty(cls) -> "HistoryState":
        return cls()

    def detached(self) -> "HistoryState":
        """Copy with every hidden vector cut from any tape."""
        return HistoryState(self.h_a.detached(), self.h_i.detached(), self.current_tick)


@dataclass(frozen=True)
class _Neighbourhood:
    heads: np.ndarray
    head_attrs: np.ndarray
    tails: np.ndarray
    relations: np.ndarray
    tail_attrs: np.ndarray
    segments: np.ndarray


def _check_entity(params: ModelParams, entity: int) -> None:
    if not 0 <= entity < params.config.num_entities:
        raise ValueError("UNKNOWN_ENTITY", {"entity": entity})


def _check_relation(params: ModelParams, relation: int) -> None:
    if not 0 <= relation < params.config.num_relations:
        raise ValueError("UNKNOWN_RELATION", {"relation": relation})


def _neighbourhood(
    items: Sequence[tuple[Snapshot, Sequence[int]]], params: ModelParams
) -> _Neighbourhood:
    """Flatten the event lists of each (snapshot, heads) item; every head must have an event."""
    k = params.config.attr_arity
    heads, head_attrs = [], []
    tails, relations, tail_attrs, segments = [], [], [], []
    position = 0
    for snapshot, lane_heads in items:
        for head in lane_heads:
            _check_entity(params, head)
            heads.append(head)
            head_attrs.append(snapshot.attributes[head])
            for event in snapshot.by_head[head]:
                _check_entity(params, event.tail)
                _check_relation(params, event.relation)
                tails.append(event.tail)
                relations.append(event.relation)
                tail_attrs.append(snapshot.attributes[event.tail])
                segments.append(position)
            position += 1
    return _Neighbourhood(
        heads=np.asarray(heads, dtype=np.int64),
        head_attrs=np.stack(head_attrs).reshape(len(heads), k),
        tails=np.asarray(tails, dtype=np.int64),
        relations=np.asarray(relations, dtype=np.int64),
        tail_attrs=np.stack(tail_attrs).reshape(len(tails), k),
        segments=np.asarray(segments, dtype=np.int64),
    )


def _embed_rows(params: ModelParams, entities: np.ndarray, attrs: np.ndarray) -> Tensor:
    """(c_h ; a·W1) for each row."""
    return concat(
        gather(params.static(ATTR_TASK), entities),
        matmul(Tensor(attrs), params.attr_proj(ATTR_TASK)),
    )


def _attribute_rows(nb: _Neighbourhood, params: ModelParams) -> Tensor:
    messages = matmul(
        concat(
            _embed_rows(params, nb.tails, nb.tail_attrs),
            gather(params["relation_table"], nb.relations),
        ),
        params["w2"],
    )
    return concat(
        _embed_rows(params, nb.heads, nb.head_attrs),
        segment_mean(messages, nb.segments, len(nb.heads)),
    )


def _interaction_rows(nb: _Neighbourhood, params: ModelParams) -> Tensor:
    static = params.static(LINK_TASK)
    messages = matmul(
        concat(gather(static, nb.tails), gather(params["relation_table"], nb.relations)),
        params["w3"],
    )
    return concat(gather(static, nb.heads), segment_mean(messages, nb.segments, len(nb.heads)))


def attribute_aggregates(snapshot: Snapshot, heads: Sequence[int], params: ModelParams) -> Tensor:
    """Rows of (e_h ; mean_j (e_tj ; e_rj)·W2) for heads that have events, shape (n, 3d)."""
    return _attribute_rows(_neighbourhood([(snapshot, heads)], params), params)


def interaction_aggregates(snapshot: Snapshot, heads: Sequence[int], params: ModelParams) -> Tensor:
    """Rows of (c_h ; mean_j (c_tj ; e_rj)·W3), shape (n, 2d). Attributes are never read."""
    return _interaction_rows(_neighbourhood([(snapshot, heads)], params), params)


# ---------------------------------------------------------------------------
# Single-entity views
# ---------------------------------------------------------------------------


def entity_embedding(h: int, a: Sequence[float] | np.ndarray, params: ModelParams) -> Tensor:
    _check_entity(params, h)
    attrs = np.asarray(a, dtype=np.float64)
    if attrs.shape != (params.config.attr_arity,):
        raise ValueError(
            "ARITY_MISMATCH", {"expected": params.config.attr_arity, "got": list(attrs.shape)}
        )
    return row(_embed_rows(params, np.asarray([h]), attrs.reshape(1, -1)), 0)


def attribute_aggregate(snapshot: Snapshot, h: int, params: ModelParams) -> Tensor:
    _check_entity(params, h)
    if h in snapshot.by_head:
        return row(attribute_aggregates(snapshot, [h], params), 0)
    if h not in snapshot.attributes:
        raise ValueError("ENTITY_NOT_OBSERVED", {"entity": h, "tick": snapshot.timestamp})
    d = params.config.embed_dim
    return concat(entity_embedding(h, snapshot.attributes[h], params), Tensor(np.zeros(d)))


def interaction_aggregate(snapshot: Snapshot, h: int, params: ModelParams) -> Tensor:
    _check_entity(params, h)
    if h in snapshot.by_head:
        return row(interaction_aggregates(snapshot, [h], params), 0)
    d = params.config.embed_dim
    return concat(row(params.static(LINK_TASK), h), Tensor(np.zeros(d)))


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------


def _interaction_slot(state: HistoryState, h: int, r: int, params: ModelParams) -> _Slot | None:
    if params.variant is VariantKind.SHARED_HISTORY:
        return state.h_a.slot(h)
    return state.h_i.slot((h, r))


def attribute_history(state: HistoryState, h: int, params: ModelParams) -> Tensor:
    hidden = state.h_a.slot(h)
    return hidden.vector() if hidden is not None else Tensor(np.zeros(params.config.hidden_dim))


def interaction_history(state: HistoryState, h: int, r: int, params: ModelParams) -> Tensor:
    hidden = _interaction_slot(state, h, r, params)
    return hidden.vector() if hidden is not None else Tensor(np.zeros(params.config.hidden_dim))


def step_history(
    snapshot: Snapshot,
    state: HistoryState,
    params: ModelParams,
    heads: Collection[int] | None = None,
) -> HistoryState:
    """Advance histories by one snapshot; entries of unobserved heads carry over."""
    return step_history_batch([snapshot], [state], params, [heads])[0]


def step_history_batch(
    snapshots: Sequence[Snapshot],
    states: Sequence[HistoryState],
    params: ModelParams,
    heads: Sequence[Collection[int] | None] | None = None,
) -> list[HistoryState]:
    """Advance lane i's history by ``snapshots[i]``; lanes never read each other's state."""
    if len(snapshots) != len(states) or (heads is not None and len(heads) != len(states)):
        raise ValueError("LANE_MISMATCH", {"snapshots": len(snapshots), "states": len(states)})
    selections = list(heads) if heads is not None else [None] * len(states)
    for snapshot, state in zip(snapshots, states):
        if state.current_tick is not None and snapshot.timestamp <= state.current_tick:
            raise ValueError(
                "TICK_REGRESSION", {"tick": snapshot.timestamp, "current": state.current_tick}
            )
    result = [HistoryState(s.h_a, s.h_i, snap.timestamp) for snap, s in zip(snapshots, states)]
    if params.variant is VariantKind.TIME_INDEPENDENT:
        return result

    active = [
        sorted(h for h in snapshot.by_head if selected is None or h in selected)
        for snapshot, selected in zip(snapshots, selections)
    ]
    lanes = [lane for lane, entities in enumerate(active) if entities]
    if not lanes:
        return result

    m = params.config.hidden_dim
    nb = _neighbourhood([(snapshots[lane], active[lane]) for lane in lanes], params)
    previous = _read_rows([states[lane].h_a.slot(h) for lane in lanes for h in active[lane]], m)
    hidden = gru_cell(_attribute_rows(nb, params), previous, params.tensors, "gru_a")
    h_a: dict[int, HiddenRows[int]] = {}
    offset = 0
    for lane in lanes:
        h_a[lane] = states[lane].h_a.updated(active[lane], hidden, offset)
        offset += len(active[lane])

    h_i = {lane: states[lane].h_i for lane in lanes}
    if params.variant in (VariantKind.FULL, VariantKind.DECOUPLED):
        pairs_by_lane: dict[int, list[tuple[int, int]]] = {}
        source_rows: list[int] = []
        pair_heads: list[int] = []
        pair_relations: list[int] = []
        previous_i: list[_Slot | None] = []
        base = 0
        for lane in lanes:
            position_of = {h: base + i for i, h in enumerate(active[lane])}
            pairs = sorted({(e.head, e.relation) for h in active[lane] for e in snapshots[lane].by_head[h]})
            pairs_by_lane[lane] = pairs
            for h, r in pairs:
                source_rows.append(position_of[h])
                pair_heads.append(h)
                pair_relations.append(r)
                previous_i.append(states[lane].h_i.slot((h, r)))
            base += len(active[lane])
        inputs = concat(
            gather(_interaction_rows(nb, params), source_rows),
            gather(params.static(LINK_TASK), pair_heads),
            gather(params["relation_table"], pair_relations),
        )
        hidden_i = gru_cell(inputs, _read_rows(previous_i, m), params.tensors, "gru_i")
        offset = 0
        for lane in lanes:
            h_i[lane] = states[lane].h_i.updated(pairs_by_lane[lane], hidden_i, offset)
            offset += len(pairs_by_lane[lane])

    for lane in lanes:
        result[lane] = HistoryState(h_a[lane], h_i[lane], snapshots[lane].timestamp)
    return result


def roll_windows(
    windows: Sequence[Sequence[Snapshot]],
    params: ModelParams,
    heads: Sequence[Collection[int] | None] | None = None,
) -> list[HistoryState]:
    """Roll each window from an empty state; windows are aligned on their last snapshot."""
    selections = list(heads) if heads is not None else [None] * len(windows)
    states = [HistoryState.empty() for _ in windows]
    span = max((len(w) for w in windows), default=0)
    for step in range(span):
        lanes = [i for i, window in enumerate(windows) if step >= span - len(window)]
        advanced = step_history_batch(
            [windows[i][step - span + len(windows[i])] for i in lanes],
            [states[i] for i in lanes],
            params,
            [selections[i] for i in lanes],
        )
        for lane, state in zip(lanes, advanced):
            states[lane] = state
    return states


# ---------------------------------------------------------------------------
# Prediction heads
# ---------------------------------------------------------------------------


def predict_attributes(state: HistoryState, entities: Sequence[int], params: ModelParams) -> Tensor:
    """f_A for each entity, shape (n, k)."""
    for h in entities:
        _check_entity(params, h)
    ids = np.asarray(entities, dtype=np.int64)
    static = gather(params.static(ATTR_TASK), ids)
    if params.variant is VariantKind.TIME_INDEPENDENT:
        features = static
    else:
        history = _read_rows([state.h_a.slot(h) for h in entities], params.config.hidden_dim)
        features = concat(history, static)
    return affine(features, params["head_a.w"], params["head_a.b"])


def predict_attribute(state: HistoryState, h: int, params: ModelParams) -> Tensor:
    return row(predict_attributes(state, [h], params), 0)


def tail_logits_batch(
    state: HistoryState, pairs: Sequence[tuple[int, int]], params: ModelParams
) -> Tensor:
    """f_I for each (head, relation) query, shape (n, num_entities)."""
    for h, r in pairs:
        _check_entity(params, h)
        _check_relation(params, r)
    heads = np.asarray([h for h, _ in pairs], dtype=np.int64)
    relations = np.asarray([r for _, r in pairs], dtype=np.int64)
    static = gather(params.static(LINK_TASK), heads)
    relation_rows = gather(params["relation_table"], relations)
    if params.variant is VariantKind.TIME_INDEPENDENT:
        features = concat(static, relation_rows)
    else:
        history = _read_rows(
            [_interaction_slot(state, h, r, params) for h, r in pairs], params.config.hidden_dim
        )
        features = concat(history, static, relation_rows)
    return affine(features, params["head_i.w"], params["head_i.b"])


def tail_logits(state: HistoryState, h: int, r: int, params: ModelParams) -> Tensor:
    return row(tail_logits_batch(state, [(h, r)], params), 0)
