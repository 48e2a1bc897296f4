"""Hextuple event streams, per-tick snapshots, normalization and time splits.

Event file format (UTF-8, tab separated, ``#`` lines ignored)::

    head  relation  tail  timestamp  a_h_1,...,a_h_k  a_t_1,...,a_t_k
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from app.schemas import NormalizationStats

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.tsv"
SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class Event:
    head: int
    relation: int
    tail: int
    attr_head: tuple[float, ...]
    attr_tail: tuple[float, ...]
    timestamp: int


@dataclass
class Vocabulary:
    """String ids ↔ dense integer ids, assigned in order of first use."""

    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    ticks: list[int] = field(default_factory=list)
    _entity_index: dict[str, int] = field(default_factory=dict, repr=False)
    _relation_index: dict[str, int] = field(default_factory=dict, repr=False)

    @classmethod
    def from_lists(cls, entities: Sequence[str], relations: Sequence[str]) -> "Vocabulary":
        vocab = cls()
        for name in entities:
            vocab.entity_id(name)
        for name in relations:
            vocab.relation_id(name)
        return vocab

    def entity_id(self, name: str) -> int:
        index = self._entity_index.get(name)
        if index is None:
            index = len(self.entities)
            self.entities.append(name)
            self._entity_index[name] = index
        return index

    def relation_id(self, name: str) -> int:
        index = self._relation_index.get(name)
        if index is None:
            index = len(self.relations)
            self.relations.append(name)
            self._relation_index[name] = index
        return index

    def tick_label(self, tick: int) -> int:
        """Original timestamp of a dense tick; ticks past the end continue from the last label."""
        if self.ticks and 0 <= tick < len(self.ticks):
            return self.ticks[tick]
        if self.ticks and tick >= len(self.ticks):
            return self.ticks[-1] + (tick - len(self.ticks) + 1)
        return tick

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)


@dataclass(frozen=True)
class EventMetadata:
    vocab: Vocabulary
    attr_arity: int
    source: str


@dataclass(frozen=True, eq=False)
class Snapshot:
    timestamp: int
    events: tuple[Event, ...]
    by_head: dict[int, tuple[Event, ...]]
    attributes: dict[int, np.ndarray]

    @classmethod
    def from_events(cls, timestamp: int, events: Iterable[Event]) -> "Snapshot":
        events = tuple(events)
        by_head: dict[int, list[Event]] = {}
        attributes: dict[int, np.ndarray] = {}
        for event in events:
            if event.timestamp != timestamp:
                raise ValueError(
                    "UNSORTED_EVENTS", {"timestamp": event.timestamp, "snapshot": timestamp}
                )
            by_head.setdefault(event.head, []).append(event)
            for entity, values in ((event.head, event.attr_head), (event.tail, event.attr_tail)):
                vector = np.asarray(values, dtype=np.float64)
                seen = attributes.get(entity)
                if seen is None:
                    vector.flags.writeable = False
                    attributes[entity] = vector
                elif not np.array_equal(seen, vector):
                    raise ValueError(
                        "ATTRIBUTE_CONFLICT", {"entity": entity, "timestamp": timestamp}
                    )
        return cls(
            timestamp=timestamp,
            events=events,
            by_head={head: tuple(group) for head, group in by_head.items()},
            attributes=attributes,
        )

    def interaction_view(self) -> list[tuple[int, int, int]]:
        """G^I: the (head, relation, tail) triples at this tick."""
        return [(e.head, e.relation, e.tail) for e in self.events]

    def attribute_view(self) -> dict[int, np.ndarray]:
        """G^A: one attribute vector per observed entity."""
        return dict(self.attributes)

    def reconstruct(self) -> list[Event]:
        """Rebuild every event from the interaction and attribute views."""
        attrs = self.attribute_view()
        return [
            Event(h, r, t, tuple(attrs[h].tolist()), tuple(attrs[t].tolist()), self.timestamp)
            for h, r, t in self.interaction_view()
        ]


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _parse_vector(text: str, line_no: int) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": "bad attribute"}) from exc
    if not all(math.isfinite(v) for v in values):
        raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": "non-finite attribute"})
    return values


def _read_records(path: Path) -> list[tuple[str, str, str, int, tuple[float, ...], tuple[float, ...], int]]:
    records = []
    arity: int | None = None
    with path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ValueError(
                    "MALFORMED_LINE", {"line": line_no, "reason": f"expected 6 fields, got {len(fields)}"}
                )
            head, relation, tail, ts_text, ah_text, at_text = fields
            try:
                timestamp = int(ts_text)
            except ValueError as exc:
                raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": "bad timestamp"}) from exc
            if timestamp < 0:
                raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": "negative timestamp"})
            attr_head = _parse_vector(ah_text, line_no)
            attr_tail = _parse_vector(at_text, line_no)
            if arity is None:
                arity = len(attr_head)
            if len(attr_head) != arity or len(attr_tail) != arity:
                raise ValueError(
                    "ARITY_MISMATCH",
                    {"line": line_no, "expected": arity, "got": [len(attr_head), len(attr_tail)]},
                )
            records.append((head, relation, tail, timestamp, attr_head, attr_tail, line_no))
    return records


def load_events(
    path: str | Path,
    vocab: Vocabulary | None = None,
    vocab_dir: str | Path | None = None,
) -> tuple[list[Event], EventMetadata]:
    """Parse an event file into timestamp-sorted events with dense ids.

    Ids are assigned in order of first appearance after a stable sort by
    timestamp. Passing ``vocab`` extends an existing vocabulary, which is how
    pre-split files keep train ids independent of valid/test.
    """
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(2, "event file not found", str(source))
    vocab = vocab if vocab is not None else Vocabulary()
    records = _read_records(source)
    records.sort(key=lambda rec: rec[3])

    events: list[Event] = []
    for head, relation, tail, timestamp, attr_head, attr_tail, _ in records:
        h = vocab.entity_id(head)
        r = vocab.relation_id(relation)
        t = vocab.entity_id(tail)
        events.append(Event(h, r, t, attr_head, attr_tail, timestamp))

    arity = len(events[0].attr_head) if events else 0
    if not events:
        logger.warning("empty event file path=%s", source)
    logger.info(
        "events loaded path=%s count=%d entities=%d relations=%d arity=%d",
        source, len(events), vocab.num_entities, vocab.num_relations, arity,
    )
    if vocab_dir is not None:
        write_vocabulary(vocab, vocab_dir)
    return events, EventMetadata(vocab=vocab, attr_arity=arity, source=str(source))


def reindex_timestamps(
    events: Sequence[Event], vocab: Vocabulary | None = None
) -> tuple[list[Event], list[int]]:
    """Map distinct ticks onto 0..T-1; the original labels are returned (and kept on ``vocab``)."""
    labels = sorted({e.timestamp for e in events})
    position = {label: index for index, label in enumerate(labels)}
    reindexed = [replace(e, timestamp=position[e.timestamp]) for e in events]
    if vocab is not None:
        vocab.ticks = labels
    return reindexed, labels


def build_snapshots(events: Sequence[Event]) -> list[Snapshot]:
    snapshots: list[Snapshot] = []
    start = 0
    for index in range(1, len(events) + 1):
        if index < len(events) and events[index].timestamp < events[index - 1].timestamp:
            raise ValueError("UNSORTED_EVENTS", {"index": index})
        if index == len(events) or events[index].timestamp != events[start].timestamp:
            snapshots.append(Snapshot.from_events(events[start].timestamp, events[start:index]))
            start = index
    return snapshots


def entity_series(snapshots: Sequence[Snapshot]) -> dict[int, list[tuple[int, np.ndarray]]]:
    """Chronological (tick, attribute) observations per entity."""
    series: dict[int, list[tuple[int, np.ndarray]]] = {}
    for snapshot in snapshots:
        for entity in sorted(snapshot.attributes):
            series.setdefault(entity, []).append((snapshot.timestamp, snapshot.attributes[entity]))
    return series


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, snapshots: Sequence[Snapshot]) -> "Normalizer":
        observations = [v for s in snapshots for v in s.attributes.values()]
        if not observations:
            raise ValueError("EMPTY_SPLIT", {"split": "train"})
        matrix = np.stack(observations)
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        # constant dimensions pass through unchanged
        constant = std == 0.0
        return cls(mean=np.where(constant, 0.0, mean), std=np.where(constant, 1.0, std))

    @classmethod
    def from_stats(cls, stats: NormalizationStats) -> "Normalizer":
        return cls(mean=np.asarray(stats.mean, dtype=np.float64), std=np.asarray(stats.std, dtype=np.float64))

    def to_stats(self) -> NormalizationStats:
        return NormalizationStats(mean=self.mean.tolist(), std=self.std.tolist())

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def transform_snapshot(self, snapshot: Snapshot) -> Snapshot:
        events = [
            replace(
                e,
                attr_head=tuple(self.transform(e.attr_head).tolist()),
                attr_tail=tuple(self.transform(e.attr_tail).tolist()),
            )
            for e in snapshot.events
        ]
        return Snapshot.from_events(snapshot.timestamp, events)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: list[Snapshot]
    valid: list[Snapshot]
    test: list[Snapshot]
    num_entities: int
    num_relations: int
    attr_arity: int
    vocab: Vocabulary
    regime: str = "fractions"
    disjoint: bool = True
    normalizer: Normalizer | None = None

    def part(self, which: str) -> list[Snapshot]:
        if which not in ("train", "valid", "test"):
            raise ValueError("USAGE_ERROR", {"split": which})
        return getattr(self, which)

    def timeline(self) -> list[Snapshot]:
        """All snapshots in tick order; ticks shared across parts are merged."""
        merged: dict[int, list[Event]] = {}
        for snapshot in [*self.train, *self.valid, *self.test]:
            merged.setdefault(snapshot.timestamp, []).extend(snapshot.events)
        return [Snapshot.from_events(ts, merged[ts]) for ts in sorted(merged)]


def normalize(split: DatasetSplit, normalizer: Normalizer | None = None) -> DatasetSplit:
    """Standardize attributes; statistics come from the train part unless ``normalizer`` is given."""
    if normalizer is None:
        if not split.train:
            raise ValueError("EMPTY_SPLIT", {"split": "train"})
        normalizer = Normalizer.fit(split.train)
    return replace(
        split,
        train=[normalizer.transform_snapshot(s) for s in split.train],
        valid=[normalizer.transform_snapshot(s) for s in split.valid],
        test=[normalizer.transform_snapshot(s) for s in split.test],
        normalizer=normalizer,
    )


def denormalize(split: DatasetSplit) -> DatasetSplit:
    if split.normalizer is None:
        return split
    normalizer = split.normalizer

    def restore(snapshot: Snapshot) -> Snapshot:
        events = [
            replace(
                e,
                attr_head=tuple(normalizer.inverse(e.attr_head).tolist()),
                attr_tail=tuple(normalizer.inverse(e.attr_tail).tolist()),
            )
            for e in snapshot.events
        ]
        return Snapshot.from_events(snapshot.timestamp, events)

    return replace(
        split,
        train=[restore(s) for s in split.train],
        valid=[restore(s) for s in split.valid],
        test=[restore(s) for s in split.test],
        normalizer=None,
    )


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_sizes(count: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Floor each of train/valid, give test the remainder, then make every part nonempty.

    A part left empty by flooring borrows one snapshot from train.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("INVALID_FRACTIONS", {"fractions": list(fractions)})
    if count < 3:
        raise ValueError("TOO_FEW_SNAPSHOTS", {"count": count})
    n_train = math.floor(fractions[0] * count + 1e-9)
    n_valid = math.floor(fractions[1] * count + 1e-9)
    n_test = count - n_train - n_valid
    if n_valid == 0:
        n_valid, n_train = 1, n_train - 1
    if n_test == 0:
        n_test, n_train = 1, n_train - 1
    if n_train <= 0:
        n_train, n_valid, n_test = 1, 1, count - 2
    return n_train, n_valid, n_test


def split_by_time(
    snapshots: Sequence[Snapshot],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    metadata: EventMetadata | None = None,
) -> DatasetSplit:
    n_train, n_valid, _ = split_sizes(len(snapshots), fractions)
    vocab = metadata.vocab if metadata is not None else Vocabulary()
    return DatasetSplit(
        train=list(snapshots[:n_train]),
        valid=list(snapshots[n_train : n_train + n_valid]),
        test=list(snapshots[n_train + n_valid :]),
        num_entities=_count_entities(snapshots, vocab),
        num_relations=_count_relations(snapshots, vocab),
        attr_arity=metadata.attr_arity if metadata is not None else _arity(snapshots),
        vocab=vocab,
        regime="fractions",
        disjoint=True,
    )


def split_from_files(
    parts: tuple[Sequence[Snapshot], Sequence[Snapshot], Sequence[Snapshot]],
    metadata: EventMetadata,
) -> DatasetSplit:
    train, valid, test = (list(p) for p in parts)
    if not train or not valid:
        raise ValueError("EMPTY_SPLIT", {"train": len(train), "valid": len(valid)})
    disjoint = True
    if valid and train[-1].timestamp >= valid[0].timestamp:
        disjoint = False
    if test and valid and valid[-1].timestamp >= test[0].timestamp:
        disjoint = False
    if not disjoint:
        logger.warning("split files overlap in time; parts will be merged per tick for history")
    everything = [*train, *valid, *test]
    return DatasetSplit(
        train=train,
        valid=valid,
        test=test,
        num_entities=_count_entities(everything, metadata.vocab),
        num_relations=_count_relations(everything, metadata.vocab),
        attr_arity=metadata.attr_arity,
        vocab=metadata.vocab,
        regime="presplit",
        disjoint=disjoint,
    )


def _count_entities(snapshots: Sequence[Snapshot], vocab: Vocabulary) -> int:
    if vocab.num_entities:
        return vocab.num_entities
    ids = [i for s in snapshots for e in s.events for i in (e.head, e.tail)]
    return max(ids) + 1 if ids else 0


def _count_relations(snapshots: Sequence[Snapshot], vocab: Vocabulary) -> int:
    if vocab.num_relations:
        return vocab.num_relations
    ids = [e.relation for s in snapshots for e in s.events]
    return max(ids) + 1 if ids else 0


def _arity(snapshots: Sequence[Snapshot]) -> int:
    for snapshot in snapshots:
        for event in snapshot.events:
            return len(event.attr_head)
    return 0


def load_dataset(
    data_dir: str | Path,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> DatasetSplit:
    """Load ``train/valid/test.tsv`` if present, else ``events.tsv`` split by ``fractions``.

    Timestamps are re-indexed to consecutive ticks over the whole dataset.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(2, "dataset directory not found", str(root))
    split_paths = [root / name for name in SPLIT_FILES]
    if all(p.is_file() for p in split_paths):
        vocab = Vocabulary()
        loaded = [load_events(p, vocab=vocab) for p in split_paths]
        arity = next((meta.attr_arity for _, meta in loaded if meta.attr_arity), 0)
        lengths = [len(events) for events, _ in loaded]
        joined, _ = reindex_timestamps([e for events, _ in loaded for e in events], vocab)
        offsets = np.cumsum([0, *lengths])
        parts = tuple(
            build_snapshots(sorted(joined[lo:hi], key=lambda e: e.timestamp))
            for lo, hi in zip(offsets[:-1], offsets[1:])
        )
        metadata = EventMetadata(vocab=vocab, attr_arity=arity, source=str(root))
        return split_from_files(parts, metadata)

    events_path = root / EVENTS_FILE
    events, metadata = load_events(events_path)
    events, _ = reindex_timestamps(events, metadata.vocab)
    return split_by_time(build_snapshots(events), fractions, metadata)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _format_vector(values: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def format_event(event: Event, vocab: Vocabulary | None = None) -> str:
    if vocab is not None and vocab.entities:
        head = vocab.entities[event.head]
        tail = vocab.entities[event.tail]
        relation = vocab.relations[event.relation]
        timestamp = vocab.tick_label(event.timestamp)
    else:
        head, tail, relation, timestamp = str(event.head), str(event.tail), str(event.relation), event.timestamp
    return "\t".join(
        [head, relation, tail, str(timestamp), _format_vector(event.attr_head), _format_vector(event.attr_tail)]
    )


def serialize_events(
    events: Iterable[Event],
    path: str | Path,
    vocab: Vocabulary | None = None,
    header: Sequence[str] = (),
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as handle:
        for line in header:
            handle.write(f"# {line}\n")
        for event in events:
            handle.write(format_event(event, vocab) + "\n")
    return target


def serialize_snapshots(snapshots: Sequence[Snapshot], path: str | Path, vocab: Vocabulary | None = None) -> Path:
    """Write every event of ``snapshots`` in tick order."""
    return serialize_events((e for s in snapshots for e in s.events), path, vocab)


def write_vocabulary(vocab: Vocabulary, out_dir: str | Path) -> tuple[Path, Path]:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entities = root / "entities.tsv"
    relations = root / "relations.tsv"
    entities.write_text("".join(f"{i}\t{name}\n" for i, name in enumerate(vocab.entities)), encoding="utf-8")
    relations.write_text("".join(f"{i}\t{name}\n" for i, name in enumerate(vocab.relations)), encoding="utf-8")
    return entities, relations


def _column_number(text: str, line_no: int, reason: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": reason}) from exc
    if not math.isfinite(value):
        raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": reason})
    return value


def convert_quadruples(
    src: str | Path,
    dst: str | Path,
    columns: str = "h r t a_h a_t tau",
) -> int:
    """Convert whitespace-separated numeric rows into the TSV event format.

    ``columns`` names each input column; ``a_h``/``a_t`` may repeat, each
    occurrence adding one attribute dimension. Returns the number of events.
    """
    names = columns.split()
    required = {"h", "r", "t", "tau", "a_h", "a_t"}
    if not required.issubset(names):
        raise ValueError("USAGE_ERROR", {"columns": columns})
    count = 0
    target = Path(dst)
    target.parent.mkdir(parents=True, exist_ok=True)
    with Path(src).open("r", encoding="utf-8") as reader, target.open("w", encoding="utf-8") as writer:
        for line_no, raw in enumerate(reader, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < len(names):
                raise ValueError("MALFORMED_LINE", {"line": line_no, "reason": "too few columns"})
            row: dict[str, str] = {}
            attr_head: list[str] = []
            attr_tail: list[str] = []
            for name, value in zip(names, parts):
                if name == "a_h":
                    attr_head.append(repr(_column_number(value, line_no, "bad attribute")))
                elif name == "a_t":
                    attr_tail.append(repr(_column_number(value, line_no, "bad attribute")))
                else:
                    row[name] = value
            timestamp = int(_column_number(row["tau"], line_no, "bad timestamp"))
            writer.write(
                "\t".join([row["h"], row["r"], row["t"], str(timestamp), ",".join(attr_head), ",".join(attr_tail)])
                + "\n"
            )
            count += 1
    return count
