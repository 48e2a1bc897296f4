from __future__ import annotations

import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.dataio import load_events
from app.schemas import SynthConfig, Topology
from app.synth import (
    HUB,
    SIDECAR_FILE,
    ar1_oracle_mse,
    estimate_oracle_mse,
    generate,
    mean_function_mse,
    oracle_mse,
    simulate,
    to_split,
)


def test_simulate_is_deterministic_in_seed() -> None:
    config = SynthConfig(num_entities=6, num_ticks=15, seed=4)

    first, second = simulate(config), simulate(config)
    other = simulate(config.model_copy(update={"seed": 5}))

    assert first.events == second.events
    np.testing.assert_array_equal(first.latent, second.latent)
    assert not np.array_equal(first.latent, other.latent)


def test_similarity_topology_has_no_self_loops_and_valid_relations() -> None:
    config = SynthConfig(num_entities=8, num_relations=3, num_ticks=20, density=0.5, seed=1)

    result = simulate(config)

    assert result.events
    assert all(e.head != e.tail for e in result.events)
    assert {e.relation for e in result.events} <= {0, 1, 2}
    assert result.latent.shape == (21, 8, 1)
    assert result.mean_function.shape == (20, 8, 1)


def test_event_attributes_are_the_latent_state_at_their_tick() -> None:
    result = simulate(SynthConfig(num_entities=5, num_ticks=8, density=0.6, seed=2))

    for event in result.events:
        assert event.attr_head == tuple(result.latent[event.timestamp, event.head].tolist())
        assert event.attr_tail == tuple(result.latent[event.timestamp, event.tail].tolist())


def test_star_topology_points_everyone_at_the_hub() -> None:
    config = SynthConfig(num_entities=5, num_ticks=4, topology=Topology.STAR, seed=0)

    result = simulate(config)

    assert all(e.tail == HUB for e in result.events)
    assert len(result.events) == 4 * 4


def test_star_with_full_coupling_copies_the_hub() -> None:
    config = SynthConfig(num_entities=4, num_ticks=3, topology=Topology.STAR, coupling=1.0, noise=0.0, seed=0)

    result = simulate(config)

    for tick in range(3):
        for entity in range(1, 4):
            np.testing.assert_allclose(result.latent[tick + 1, entity], result.latent[tick, HUB])
        # the hub has no outgoing edges and follows its own AR term
        np.testing.assert_allclose(result.latent[tick + 1, HUB], config.ar_coef * result.latent[tick, HUB])


def test_periodic_topology_repeats_with_period() -> None:
    config = SynthConfig(num_entities=6, num_relations=1, num_ticks=6, topology=Topology.PERIODIC, period=2)

    result = simulate(config)
    pairs = {
        tick: sorted((e.head, e.tail) for e in result.events if e.timestamp == tick) for tick in range(6)
    }

    assert pairs[0] == pairs[2] == pairs[4]
    assert pairs[1] == pairs[3] == pairs[5]
    assert pairs[0] != pairs[1]
    assert (0, 1) in pairs[0] and (0, 2) in pairs[1]


def test_zero_coupling_is_a_pure_autoregression() -> None:
    config = SynthConfig(num_entities=5, num_ticks=10, coupling=0.0, density=0.8, seed=3)

    result = simulate(config)

    np.testing.assert_allclose(result.mean_function, config.ar_coef * result.latent[:-1])


def test_noiseless_run_hits_its_mean_function() -> None:
    result = simulate(SynthConfig(num_entities=5, num_ticks=10, noise=0.0, seed=7))

    assert mean_function_mse(result) == 0.0
    assert oracle_mse(result.config) == 0.0


def test_monte_carlo_oracle_matches_noise_variance() -> None:
    config = SynthConfig(num_entities=10, num_ticks=100, noise=0.1, seed=0)

    estimate = estimate_oracle_mse(config)

    assert oracle_mse(config) == pytest.approx(0.01)
    assert estimate == pytest.approx(0.01, rel=0.1)


def test_ar1_fit_recovers_uncoupled_dynamics() -> None:
    config = SynthConfig(num_entities=10, num_ticks=100, coupling=0.0, noise=0.1, seed=0)

    result = simulate(config)

    # least squares on the same data can only do as well as or better than the true coefficient
    assert ar1_oracle_mse(result.latent) <= mean_function_mse(result) + 1e-12


def test_graph_blind_gap_grows_with_coupling() -> None:
    gaps = []
    for coupling in (0.0, 0.5, 1.0):
        result = simulate(SynthConfig(coupling=coupling, seed=0))
        gaps.append(ar1_oracle_mse(result.latent) - mean_function_mse(result))

    assert abs(gaps[0]) < 1e-5
    assert gaps[0] < gaps[1] < gaps[2]
    assert gaps[2] > 0.0


def test_noiseless_uncoupled_series_is_fit_exactly_by_ar1() -> None:
    result = simulate(SynthConfig(coupling=0.0, noise=0.0, seed=0))

    assert ar1_oracle_mse(result.latent) < 1e-20


def test_generate_writes_events_and_sidecar(tmp_path) -> None:
    config = SynthConfig(num_entities=4, num_ticks=6, density=0.7, seed=1)

    path = generate(config, tmp_path / "data")
    events, meta = load_events(path)
    sidecar = json.loads((tmp_path / "data" / SIDECAR_FILE).read_text(encoding="utf-8"))

    assert len(events) == sidecar["num_events"] == len(simulate(config).events)
    assert sidecar["config"]["seed"] == 1
    assert sidecar["oracle_mse"] == pytest.approx(config.noise**2)
    assert set(meta.vocab.entities) <= {f"e{i}" for i in range(4)}


def test_generate_is_byte_identical_for_a_seed(tmp_path) -> None:
    config = SynthConfig(num_entities=6, num_ticks=20, seed=11)

    first = generate(config, tmp_path / "a")
    second = generate(config, tmp_path / "b")

    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / "a" / SIDECAR_FILE).read_bytes() == (tmp_path / "b" / SIDECAR_FILE).read_bytes()
    assert generate(config.model_copy(update={"seed": 12}), tmp_path / "c").read_bytes() != first.read_bytes()


def test_to_split_keeps_the_full_vocabulary(small_split) -> None:
    assert small_split.num_entities == 5
    assert small_split.num_relations == 2
    assert small_split.attr_arity == 1
    assert small_split.train and small_split.valid and small_split.test
    assert small_split.train[-1].timestamp < small_split.valid[0].timestamp


def test_to_split_custom_fractions() -> None:
    result = simulate(SynthConfig(num_entities=4, num_ticks=10, topology=Topology.STAR))

    split = to_split(result, (0.6, 0.2, 0.2))

    assert (len(split.train), len(split.valid), len(split.test)) == (6, 2, 2)


def test_star_needs_two_entities() -> None:
    with pytest.raises(ValidationError):
        SynthConfig(num_entities=1, topology=Topology.STAR)
