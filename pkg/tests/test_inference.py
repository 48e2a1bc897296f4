from __future__ import annotations

import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.dataio import Normalizer, Snapshot, Vocabulary, load_events
from app.errors import error_code
from app.inference import (
    FORECAST_ATTRIBUTES_FILE,
    FORECAST_EVENTS_FILE,
    default_queries,
    forecast,
    one_step_predictions,
    rank_of,
    rank_tails,
    warm_state,
    write_forecast,
)
from app.model import HistoryState, predict_attributes, step_history, zero_params
from app.schemas import ForecastConfig

from conftest import ev, toy_model_config, toy_snapshots


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


class TestRankTails:
    def test_uniform_logits_rank_by_entity_id(self) -> None:
        params = zero_params(toy_model_config())

        ranked = rank_tails(HistoryState.empty(), 0, 0, params)

        assert ranked.entities.tolist() == [0, 1, 2]
        np.testing.assert_allclose(ranked.probabilities, [1 / 3] * 3)

    def test_crafted_logits(self) -> None:
        params = zero_params(toy_model_config())
        params["head_i.b"].values[:] = [0.1, 2.0, -1.0]

        ranked = rank_tails(HistoryState.empty(), 2, 1, params)

        assert ranked.entities.tolist() == [1, 0, 2]
        assert ranked.probabilities.sum() == pytest.approx(1.0, abs=1e-10)
        assert list(ranked.probabilities) == sorted(ranked.probabilities, reverse=True)

    def test_trained_params_probabilities_sum_to_one(self, params, snapshots) -> None:
        state = warm_state(snapshots, params)

        ranked = rank_tails(state, 1, 1, params)

        assert ranked.probabilities.sum() == pytest.approx(1.0, abs=1e-10)
        assert sorted(ranked.entities.tolist()) == [0, 1, 2]


@pytest.mark.parametrize(
    ("probabilities", "tail", "expected"),
    [
        ([0.2, 0.5, 0.3], 2, 2),
        ([0.2, 0.5, 0.3], 1, 1),
        ([0.25, 0.25, 0.25, 0.25], 3, 4),
        ([0.25, 0.25, 0.25, 0.25], 0, 1),
        ([0.1, 0.45, 0.45], 2, 2),
    ],
)
def test_rank_of(probabilities: list[float], tail: int, expected: int) -> None:
    assert rank_of(np.asarray(probabilities), tail) == expected


# ---------------------------------------------------------------------------
# Warm-up and one-step prediction
# ---------------------------------------------------------------------------


def test_warm_state_uses_only_the_last_snapshots(params, snapshots) -> None:
    state = warm_state(snapshots, params, seq_len=2)

    manual = HistoryState.empty()
    for snapshot in snapshots[2:]:
        manual = step_history(snapshot, manual, params)
    assert state.current_tick == 3
    assert set(state.h_a) == set(manual.h_a)
    for h in state.h_a:
        np.testing.assert_array_equal(state.h_a[h].values, manual.h_a[h].values)
        assert state.h_a[h].tape is None


def test_one_step_predictions_follow_true_history(params, snapshots) -> None:
    results = one_step_predictions(params, snapshots, snapshots[3:], seq_len=10)

    (result,) = results
    state = warm_state(snapshots[:3], params)
    assert result.tick == 3
    assert result.entities == [0, 1, 2]
    np.testing.assert_allclose(result.predicted, predict_attributes(state, [0, 1, 2], params).values)
    np.testing.assert_allclose(result.truth[:, 0], [0.7, 0.1, 0.2])
    assert result.queries == [(0, 1, 2), (2, 1, 1)]
    assert len(result.ranks) == 2
    assert all(1 <= rank <= 3 for rank in result.ranks)


def test_one_step_predictions_ignore_later_snapshots(params) -> None:
    original = toy_snapshots()
    mutated = original[:2] + [Snapshot.from_events(2, [ev(1, 1, 0, 5.0, -5.0, 2)]), original[3]]

    first = one_step_predictions(params, original, original[1:2])
    second = one_step_predictions(params, mutated, mutated[1:2])

    np.testing.assert_array_equal(first[0].predicted, second[0].predicted)
    assert first[0].ranks == second[0].ranks


def test_default_queries_come_from_last_snapshot(snapshots) -> None:
    assert default_queries(snapshots) == [(0, 1), (2, 1)]
    assert default_queries([]) == []


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------


class TestForecast:
    def test_single_step_matches_direct_prediction(self, params, snapshots) -> None:
        state = warm_state(snapshots, params)

        steps, _ = forecast(snapshots, state, params, ForecastConfig(horizon=1))

        (step,) = steps
        np.testing.assert_allclose(step.attributes, predict_attributes(state, [0, 1, 2], params).values)
        assert step.tick == 4

    def test_predicted_events_carry_predicted_attributes(self, params, snapshots) -> None:
        steps, _ = forecast(snapshots, None, params, ForecastConfig(horizon=3, top_k=2))

        assert [s.tick for s in steps] == [4, 5, 6]
        for step in steps:
            for event in step.snapshot.events:
                assert event.attr_head == tuple(step.attributes[event.head].tolist())
                assert event.attr_tail == tuple(step.attributes[event.tail].tolist())
                assert event.timestamp == step.tick
            assert len(step.snapshot.events) == 2 * 2

    def test_top_k_of_all_entities_keeps_every_tail(self, params, snapshots) -> None:
        config = ForecastConfig(horizon=1, top_k=3, queries=[(0, 0), (1, 1)])

        steps, _ = forecast(snapshots, None, params, config)

        triples = set(steps[0].snapshot.interaction_view())
        assert triples == {(h, r, t) for h, r in [(0, 0), (1, 1)] for t in range(3)}

    def test_top_k_is_capped_at_entity_count(self, params, snapshots) -> None:
        steps, _ = forecast(snapshots, None, params, ForecastConfig(horizon=1, top_k=50, queries=[(2, 0)]))

        assert len(steps[0].snapshot.events) == 3

    def test_rollout_ignores_withheld_snapshots(self, params, snapshots) -> None:
        corrupted = snapshots[:2] + [
            Snapshot.from_events(s.timestamp, [ev(2, 0, 1, 1e3, -1e3, s.timestamp)]) for s in snapshots[2:]
        ]
        config = ForecastConfig(horizon=5, queries=[(0, 1), (2, 1)])

        first, first_state = forecast(snapshots[:2], None, params, config)
        second, second_state = forecast(corrupted[:2], None, params, config)
        warmed, _ = forecast(list(snapshots[:2]), warm_state(snapshots[:2], params), params, config)

        assert [s.tick for s in first] == [2, 3, 4, 5, 6]
        for a, b, c in zip(first, second, warmed):
            np.testing.assert_array_equal(a.attributes, b.attributes)
            np.testing.assert_array_equal(a.attributes, c.attributes)
            assert a.snapshot.interaction_view() == b.snapshot.interaction_view()
        np.testing.assert_array_equal(first_state.h_a[2].values, second_state.h_a[2].values)
        # withheld ticks are overwritten by predictions, never by the corrupted truth
        assert all(abs(v) < 1e3 for e in second[0].snapshot.events for v in e.attr_head)

    def test_final_state_continues_the_forecast(self, params, snapshots) -> None:
        steps, state = forecast(snapshots, None, params, ForecastConfig(horizon=2))
        tail, _ = forecast(snapshots, state, params, ForecastConfig(horizon=1))

        assert state.current_tick == 5
        assert tail[0].tick == 6
        longer, _ = forecast(snapshots, None, params, ForecastConfig(horizon=3))
        np.testing.assert_allclose(tail[0].attributes, longer[2].attributes)

    def test_zero_horizon_is_rejected(self, params, snapshots) -> None:
        with pytest.raises(ValueError) as exc:
            forecast(snapshots, None, params, ForecastConfig.model_construct(horizon=0, top_k=1, queries=None))
        assert error_code(exc.value) == "INVALID_HORIZON"
        with pytest.raises(ValidationError):
            ForecastConfig(horizon=0)

    def test_empty_query_set_is_rejected(self, params) -> None:
        with pytest.raises(ValueError) as exc:
            forecast([], HistoryState.empty(), params, ForecastConfig())
        assert error_code(exc.value) == "INVALID_CONFIG"
        with pytest.raises(ValidationError):
            ForecastConfig(queries=[])


def test_write_forecast_restores_raw_units(tmp_path, params, snapshots) -> None:
    steps, _ = forecast(snapshots, None, params, ForecastConfig(horizon=2, top_k=1))
    vocab = Vocabulary.from_lists(["a", "b", "c"], ["x", "y"])
    vocab.ticks = [100, 101, 102, 103]
    normalizer = Normalizer(mean=np.array([10.0]), std=np.array([2.0]))

    events_path, attributes_path = write_forecast(steps, tmp_path, vocab, normalizer)

    assert events_path.name == FORECAST_EVENTS_FILE
    assert attributes_path.name == FORECAST_ATTRIBUTES_FILE
    assert events_path.read_text(encoding="utf-8").splitlines()[0] == "# predicted=true"
    events, meta = load_events(events_path)
    assert [e.timestamp for e in events] == [104, 104, 105, 105]
    first = steps[0].snapshot.events[0]
    assert events[0].attr_head[0] == pytest.approx(first.attr_head[0] * 2.0 + 10.0)
    payload = json.loads(attributes_path.read_text(encoding="utf-8"))
    assert payload["ticks"] == [104, 105]
    assert set(payload["attributes"]) == {"a", "b", "c"}
    assert payload["attributes"]["b"][1][0] == pytest.approx(steps[1].attributes[1][0] * 2.0 + 10.0)
