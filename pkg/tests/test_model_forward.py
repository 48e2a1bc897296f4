from __future__ import annotations

import numpy as np
import pytest

from app.autodiff import Tape, Tensor, mse, softmax
from app.dataio import Event, Snapshot
from app.errors import error_code
from app.model import (
    HistoryState,
    attribute_aggregate,
    attribute_history,
    entity_embedding,
    init_params,
    interaction_aggregate,
    interaction_history,
    param_shapes,
    predict_attribute,
    predict_attributes,
    roll_windows,
    step_history,
    step_history_batch,
    tail_logits,
    tail_logits_batch,
    zero_params,
)
from app.schemas import VariantKind

from conftest import ev, toy_model_config, toy_snapshots


def _scalar_params(variant: VariantKind = VariantKind.FULL):
    """d = m = k = 1 with every parameter zero, for hand computation."""
    return zero_params(toy_model_config(variant, embed_dim=1, hidden_dim=1))


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _np_gru(x: np.ndarray, h: np.ndarray, p: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    w = {name.split(".", 1)[1]: value for name, value in p.items() if name.startswith(prefix + ".")}
    r = _np_sigmoid(x @ w["w_xr"] + w["b_r"] + h @ w["w_hr"])
    z = _np_sigmoid(x @ w["w_xz"] + w["b_z"] + h @ w["w_hz"])
    n = np.tanh(x @ w["w_xn"] + w["b_xn"] + r * (h @ w["w_hn"] + w["b_hn"]))
    return (1.0 - z) * n + z * h


def _with_random_biases(params, seed: int = 0):
    rng = np.random.default_rng(seed)
    for name in params:
        if params[name].values.ndim == 1:
            params[name].values[:] = rng.standard_normal(params[name].shape)
    return params


# ---------------------------------------------------------------------------
# Embeddings and aggregators
# ---------------------------------------------------------------------------


class TestEntityEmbedding:
    def test_hand_example(self) -> None:
        params = _scalar_params()
        params["entity_static"].values[0] = [2.0]
        params["attr_proj"].values[:] = [[3.0]]

        out = entity_embedding(0, [5.0], params)

        np.testing.assert_allclose(out.values, [2.0, 15.0], atol=1e-10)

    def test_zero_attribute_gives_static_part_only(self, params) -> None:
        out = entity_embedding(1, [0.0], params)

        np.testing.assert_array_equal(out.values[:2], params["entity_static"].values[1])
        np.testing.assert_array_equal(out.values[2:], [0.0, 0.0])

    def test_arity_mismatch(self, params) -> None:
        with pytest.raises(ValueError) as exc:
            entity_embedding(0, [1.0, 2.0], params)
        assert error_code(exc.value) == "ARITY_MISMATCH"

    def test_unknown_entity(self, params) -> None:
        with pytest.raises(ValueError) as exc:
            entity_embedding(3, [1.0], params)
        assert error_code(exc.value) == "UNKNOWN_ENTITY"


class TestAttributeAggregate:
    def _params(self):
        params = _scalar_params()
        params["entity_static"].values[:, 0] = [1.0, 2.0, 0.0]
        params["attr_proj"].values[:] = [[1.0]]
        params["relation_table"].values[0] = [1.0]
        params["w2"].values[:] = np.ones((3, 1))
        return params

    def test_hand_example(self) -> None:
        snapshot = Snapshot.from_events(0, [ev(0, 0, 1, 1.0, 3.0, 0)])

        out = attribute_aggregate(snapshot, 0, self._params())

        np.testing.assert_allclose(out.values, [1.0, 1.0, 6.0], atol=1e-10)

    def test_duplicate_events_do_not_change_the_mean(self) -> None:
        once = Snapshot.from_events(0, [ev(0, 0, 1, 1.0, 3.0, 0)])
        twice = Snapshot.from_events(0, [ev(0, 0, 1, 1.0, 3.0, 0), ev(0, 0, 1, 1.0, 3.0, 0)])
        params = self._params()

        np.testing.assert_allclose(
            attribute_aggregate(twice, 0, params).values, attribute_aggregate(once, 0, params).values
        )

    def test_empty_neighbourhood_uses_zero_message(self, params) -> None:
        snapshot = Snapshot.from_events(0, [ev(0, 0, 1, 0.5, -1.0, 0)])

        out = attribute_aggregate(snapshot, 1, params)

        np.testing.assert_allclose(out.values[:4], entity_embedding(1, [-1.0], params).values)
        np.testing.assert_array_equal(out.values[4:], [0.0, 0.0])

    def test_unobserved_entity_is_rejected(self, params) -> None:
        snapshot = Snapshot.from_events(0, [ev(0, 0, 1, 0.5, -1.0, 0)])

        with pytest.raises(ValueError) as exc:
            attribute_aggregate(snapshot, 2, params)
        assert error_code(exc.value) == "ENTITY_NOT_OBSERVED"

    def test_unknown_tail_and_relation(self, params) -> None:
        bad_tail = Snapshot.from_events(0, [ev(0, 0, 7, 0.5, 1.0, 0)])
        bad_relation = Snapshot.from_events(0, [ev(0, 5, 1, 0.5, 1.0, 0)])

        with pytest.raises(ValueError) as exc:
            attribute_aggregate(bad_tail, 0, params)
        assert error_code(exc.value) == "UNKNOWN_ENTITY"
        with pytest.raises(ValueError) as exc:
            interaction_aggregate(bad_relation, 0, params)
        assert error_code(exc.value) == "UNKNOWN_RELATION"


class TestInteractionAggregate:
    def test_hand_example(self) -> None:
        params = _scalar_params()
        params["entity_static"].values[:, 0] = [4.0, 2.0, 0.0]
        params["relation_table"].values[0] = [3.0]
        params["w3"].values[:] = np.ones((2, 1))
        snapshot = Snapshot.from_events(0, [ev(0, 0, 1, 1.0, 1.0, 0)])

        out = interaction_aggregate(snapshot, 0, params)

        np.testing.assert_allclose(out.values, [4.0, 5.0], atol=1e-10)

    def test_empty_neighbourhood(self, params) -> None:
        snapshot = Snapshot.from_events(0, [ev(0, 0, 1, 1.0, 1.0, 0)])

        out = interaction_aggregate(snapshot, 2, params)

        np.testing.assert_array_equal(out.values, [*params["entity_static"].values[2], 0.0, 0.0])

    @pytest.mark.parametrize("seed", range(3))
    def test_ignores_attribute_values(self, params, seed: int) -> None:
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(3)
        b = rng.standard_normal(3)
        first = Snapshot.from_events(0, [ev(0, 0, 1, a[0], a[1], 0), ev(0, 1, 2, a[0], a[2], 0)])
        second = Snapshot.from_events(0, [ev(0, 0, 1, b[0], b[1], 0), ev(0, 1, 2, b[0], b[2], 0)])

        assert np.array_equal(
            interaction_aggregate(first, 0, params).values, interaction_aggregate(second, 0, params).values
        )


@pytest.mark.parametrize(("d", "k", "m"), [(1, 1, 1), (2, 1, 3), (3, 2, 2), (4, 3, 5)])
def test_dimension_laws(d: int, k: int, m: int) -> None:
    config = toy_model_config(embed_dim=d, attr_arity=k, hidden_dim=m)
    params = init_params(config, seed=d)
    snapshot = Snapshot.from_events(
        0, [Event(0, 0, 1, (0.1,) * k, (0.2,) * k, 0), Event(1, 1, 2, (0.2,) * k, (0.3,) * k, 0)]
    )

    assert entity_embedding(0, [0.1] * k, params).shape == (2 * d,)
    assert attribute_aggregate(snapshot, 0, params).shape == (3 * d,)
    assert interaction_aggregate(snapshot, 0, params).shape == (2 * d,)
    assert param_shapes(config)["gru_i.w_xn"] == (4 * d, m)
    assert param_shapes(config)["gru_a.w_xn"] == (3 * d, m)

    state = step_history(snapshot, HistoryState.empty(), params)

    assert state.h_a[0].shape == (m,)
    assert predict_attribute(state, 0, params).shape == (k,)
    assert tail_logits(state, 0, 0, params).shape == (3,)


# ---------------------------------------------------------------------------
# History recurrences
# ---------------------------------------------------------------------------


class TestStepHistory:
    def test_single_event_matches_standalone_gru(self, params) -> None:
        params = _with_random_biases(params, seed=1)
        snapshot = Snapshot.from_events(0, [ev(0, 1, 2, 0.3, -0.4, 0)])
        values = params.values()

        state = step_history(snapshot, HistoryState.empty(), params)

        hidden = np.zeros(3)
        expected_a = _np_gru(attribute_aggregate(snapshot, 0, params).values, hidden, values, "gru_a")
        interaction_input = np.concatenate(
            [
                interaction_aggregate(snapshot, 0, params).values,
                values["entity_static"][0],
                values["relation_table"][1],
            ]
        )
        expected_i = _np_gru(interaction_input, hidden, values, "gru_i")
        np.testing.assert_allclose(state.h_a[0].values, expected_a, atol=1e-10)
        np.testing.assert_allclose(state.h_i[(0, 1)].values, expected_i, atol=1e-10)
        assert set(state.h_a) == {0}
        assert set(state.h_i) == {(0, 1)}
        assert state.current_tick == 0

    def test_second_step_feeds_previous_hidden(self, params) -> None:
        first = Snapshot.from_events(0, [ev(0, 0, 1, 0.3, -0.4, 0)])
        second = Snapshot.from_events(1, [ev(0, 0, 2, 0.1, 0.2, 1)])

        state = step_history(first, HistoryState.empty(), params)
        after = step_history(second, state, params)

        expected = _np_gru(
            attribute_aggregate(second, 0, params).values, state.h_a[0].values, params.values(), "gru_a"
        )
        np.testing.assert_allclose(after.h_a[0].values, expected, atol=1e-10)

    def test_unobserved_entries_carry_over(self, params, snapshots) -> None:
        state = step_history(snapshots[0], HistoryState.empty(), params)
        after = step_history(Snapshot.from_events(1, [ev(2, 0, 0, 0.1, 0.4, 1)]), state, params)

        assert after.h_a[0] is state.h_a[0]
        assert after.h_a[1] is state.h_a[1]
        assert after.h_i[(0, 0)] is state.h_i[(0, 0)]
        assert 2 in after.h_a

    def test_empty_snapshot_only_advances_the_tick(self, params, snapshots) -> None:
        state = step_history(snapshots[0], HistoryState.empty(), params)

        after = step_history(Snapshot.from_events(5, []), state, params)

        assert dict(after.h_a) == dict(state.h_a)
        assert dict(after.h_i) == dict(state.h_i)
        assert after.current_tick == 5

    def test_event_order_does_not_matter(self, params) -> None:
        events = [ev(0, 0, 1, 0.5, -0.2, 0), ev(1, 1, 2, -0.2, 0.3, 0), ev(0, 1, 2, 0.5, 0.3, 0)]

        forward = step_history(Snapshot.from_events(0, events), HistoryState.empty(), params)
        backward = step_history(Snapshot.from_events(0, events[::-1]), HistoryState.empty(), params)

        for h in (0, 1):
            np.testing.assert_allclose(forward.h_a[h].values, backward.h_a[h].values, rtol=1e-12)
        for pair in forward.h_i:
            np.testing.assert_allclose(forward.h_i[pair].values, backward.h_i[pair].values, rtol=1e-12)

    def test_heads_do_not_influence_each_other(self, params) -> None:
        together = Snapshot.from_events(0, [ev(0, 0, 1, 0.5, -0.2, 0), ev(2, 1, 1, 0.1, -0.2, 0)])
        alone = Snapshot.from_events(0, [ev(0, 0, 1, 0.5, -0.2, 0)])

        joint = step_history(together, HistoryState.empty(), params)
        single = step_history(alone, HistoryState.empty(), params)

        np.testing.assert_allclose(joint.h_a[0].values, single.h_a[0].values, rtol=1e-12)

    def test_heads_filter_limits_updates(self, params, snapshots) -> None:
        state = step_history(snapshots[1], HistoryState.empty(), params, heads={2})

        assert set(state.h_a) == {2}
        assert set(state.h_i) == {(2, 0)}

    def test_tick_regression_is_rejected(self, params, snapshots) -> None:
        state = step_history(snapshots[1], HistoryState.empty(), params)

        with pytest.raises(ValueError) as exc:
            step_history(snapshots[1], state, params)
        assert error_code(exc.value) == "TICK_REGRESSION"
        with pytest.raises(ValueError):
            step_history(snapshots[0], state, params)

    def test_tick_gaps_are_accepted(self, params, snapshots) -> None:
        state = step_history(snapshots[0], HistoryState.empty(), params)

        after = step_history(snapshots[3], state, params)

        assert after.current_tick == 3

    def test_detached_state_is_off_tape(self, params, snapshots) -> None:
        with Tape():
            state = step_history(snapshots[0], HistoryState.empty(), params)
        detached = state.detached()

        assert state.h_a[0].tape is not None
        assert all(v.tape is None and not v.requires_grad for v in detached.h_a.values())
        np.testing.assert_array_equal(detached.h_a[0].values, state.h_a[0].values)


class TestLaneBatching:
    def test_batch_matches_one_lane_at_a_time(self, params, snapshots) -> None:
        warm = step_history(snapshots[0], HistoryState.empty(), params)
        lanes = [(snapshots[1], warm), (snapshots[2], HistoryState.empty()), (snapshots[3], warm)]

        batched = step_history_batch([s for s, _ in lanes], [st for _, st in lanes], params)

        for (snapshot, state), got in zip(lanes, batched):
            alone = step_history(snapshot, state, params)
            assert got.current_tick == alone.current_tick
            assert set(got.h_a) == set(alone.h_a) and set(got.h_i) == set(alone.h_i)
            for h in alone.h_a:
                np.testing.assert_allclose(got.h_a[h].values, alone.h_a[h].values, rtol=1e-12, atol=1e-15)
            for key in alone.h_i:
                np.testing.assert_allclose(got.h_i[key].values, alone.h_i[key].values, rtol=1e-12, atol=1e-15)

    def test_lane_mismatch_is_rejected(self, params, snapshots) -> None:
        with pytest.raises(ValueError) as exc:
            step_history_batch(snapshots[:2], [HistoryState.empty()], params)
        assert error_code(exc.value) == "LANE_MISMATCH"

    @pytest.mark.parametrize("variant", list(VariantKind))
    def test_roll_windows_aligns_on_last_snapshot(self, snapshots, variant: VariantKind) -> None:
        params = init_params(toy_model_config(variant), seed=5)
        windows = [snapshots, snapshots[2:], snapshots[1:3]]

        rolled = roll_windows(windows, params)

        for window, got in zip(windows, rolled):
            state = HistoryState.empty()
            for snapshot in window:
                state = step_history(snapshot, state, params)
            assert got.current_tick == window[-1].timestamp
            for h in state.h_a:
                np.testing.assert_allclose(got.h_a[h].values, state.h_a[h].values, rtol=1e-12, atol=1e-15)

    def test_batched_gradients_match_single_lane(self, params, snapshots) -> None:
        def loss_and_grad(windows) -> tuple[float, np.ndarray]:
            with Tape() as tape:
                states = roll_windows(windows, params)
                loss = mse(predict_attributes(states[0], [0, 2], params), np.ones((2, 1)))
            return loss.item(), tape.backward(loss)[params["gru_a.w_xr"]]

        alone, alone_grad = loss_and_grad([snapshots[:3]])
        together, together_grad = loss_and_grad([snapshots[:3], snapshots[1:], snapshots[:2]])

        assert together == pytest.approx(alone, rel=1e-12)
        assert np.any(alone_grad != 0.0)
        np.testing.assert_allclose(together_grad, alone_grad, rtol=1e-10, atol=1e-14)


class TestVariants:
    def test_shared_history_reads_attribute_history(self, snapshots) -> None:
        params = init_params(toy_model_config(VariantKind.SHARED_HISTORY), seed=2)

        state = HistoryState.empty()
        for snapshot in snapshots:
            state = step_history(snapshot, state, params)

        assert not state.h_i
        for h in range(3):
            for r in range(2):
                np.testing.assert_array_equal(
                    interaction_history(state, h, r, params).values, attribute_history(state, h, params).values
                )
        assert "gru_i.w_xr" not in params
        assert "w3" not in params

    def test_time_independent_never_updates(self, snapshots) -> None:
        params = init_params(toy_model_config(VariantKind.TIME_INDEPENDENT), seed=2)

        state = HistoryState.empty()
        for snapshot in snapshots:
            state = step_history(snapshot, state, params)

        assert not state.h_a and not state.h_i
        assert state.current_tick == 3
        expected = params["entity_static"].values[1] @ params["head_a.w"].values + params["head_a.b"].values
        np.testing.assert_allclose(predict_attribute(state, 1, params).values, expected)

    def test_time_independent_tail_logits_use_static_and_relation(self) -> None:
        params = init_params(toy_model_config(VariantKind.TIME_INDEPENDENT), seed=5)

        logits = tail_logits(HistoryState.empty(), 2, 1, params)

        features = np.concatenate([params["entity_static"].values[2], params["relation_table"].values[1]])
        np.testing.assert_allclose(logits.values, features @ params["head_i.w"].values + params["head_i.b"].values)

    def test_decoupled_uses_task_copies(self, snapshots) -> None:
        params = init_params(toy_model_config(VariantKind.DECOUPLED), seed=2)
        snapshot = snapshots[0]

        before = interaction_aggregate(snapshot, 0, params).values.copy()
        params["entity_static.attr"].values[:] += 1.0
        params["attr_proj.attr"].values[:] += 1.0

        np.testing.assert_array_equal(interaction_aggregate(snapshot, 0, params).values, before)
        np.testing.assert_array_equal(
            entity_embedding(0, [0.5], params).values[:2], params["entity_static.attr"].values[0]
        )


# ---------------------------------------------------------------------------
# Prediction heads
# ---------------------------------------------------------------------------


class TestHeads:
    def test_zero_params_predict_zero_and_uniform(self) -> None:
        params = zero_params(toy_model_config())

        assert np.array_equal(predict_attribute(HistoryState.empty(), 0, params).values, [0.0])
        probs = softmax(tail_logits(HistoryState.empty(), 0, 1, params).values)
        np.testing.assert_allclose(probs, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)

    def test_predict_attribute_hand_example(self) -> None:
        params = _scalar_params()
        params["entity_static"].values[0] = [2.0]
        params["head_a.w"].values[:] = [[3.0], [4.0]]
        params["head_a.b"].values[:] = [1.0]
        state = HistoryState(h_a={0: Tensor([0.5])})

        out = predict_attribute(state, 0, params)

        # 0.5·3 + 2·4 + 1
        np.testing.assert_allclose(out.values, [10.5], atol=1e-10)

    def test_absent_history_reads_zero(self, params) -> None:
        expected = params["entity_static"].values[1] @ params["head_a.w"].values[3:] + params["head_a.b"].values

        out = predict_attribute(HistoryState.empty(), 1, params)

        np.testing.assert_allclose(out.values, expected)

    @pytest.mark.parametrize("k", [1, 2])
    def test_prediction_arity(self, k: int) -> None:
        params = init_params(toy_model_config(attr_arity=k), seed=0)

        assert predict_attributes(HistoryState.empty(), [0, 1, 2], params).shape == (3, k)

    def test_crafted_bias_ranks_tail_two_first(self) -> None:
        params = zero_params(toy_model_config())
        params["head_i.b"].values[:] = [0.0, 0.1, 1.0]

        logits = tail_logits(HistoryState.empty(), 1, 0, params)

        assert int(np.argmax(logits.values)) == 2

    def test_batch_matches_single_queries(self, params, snapshots) -> None:
        state = step_history(snapshots[0], HistoryState.empty(), params)
        pairs = [(0, 0), (1, 1), (2, 0)]

        batch = tail_logits_batch(state, pairs, params)

        assert batch.shape == (3, 3)
        for position, (h, r) in enumerate(pairs):
            np.testing.assert_allclose(batch.values[position], tail_logits(state, h, r, params).values)

    def test_unknown_relation_in_query(self, params) -> None:
        with pytest.raises(ValueError) as exc:
            tail_logits(HistoryState.empty(), 0, 2, params)
        assert error_code(exc.value) == "UNKNOWN_RELATION"


def test_predictions_ignore_later_snapshots(params) -> None:
    history = toy_snapshots()
    mutated = toy_snapshots()[:2] + [Snapshot.from_events(2, [ev(1, 1, 2, 9.0, -9.0, 2)])]

    def predictions(sequence):
        state = HistoryState.empty()
        for snapshot in sequence[:2]:
            state = step_history(snapshot, state, params)
        return predict_attributes(state, [0, 1, 2], params).values, tail_logits(state, 0, 1, params).values

    for original, changed in zip(predictions(history), predictions(mutated)):
        np.testing.assert_array_equal(original, changed)
