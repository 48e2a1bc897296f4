import sys
from pathlib import Path

import pytest


ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.dataio import Event, Snapshot
from app.model import init_params
from app.schemas import ModelConfig, SynthConfig, VariantKind
from app.synth import simulate, to_split


def ev(h: int, r: int, t: int, a_h: float, a_t: float, tick: int) -> Event:
    return Event(h, r, t, (float(a_h),), (float(a_t),), tick)


def toy_snapshots() -> list[Snapshot]:
    """Three entities, two relations, four ticks, scalar attributes."""
    return [
        Snapshot.from_events(0, [ev(0, 0, 1, 0.5, -0.2, 0), ev(1, 1, 2, -0.2, 0.3, 0)]),
        Snapshot.from_events(1, [ev(0, 1, 2, 0.4, 0.1, 1), ev(2, 0, 0, 0.1, 0.4, 1), ev(2, 0, 1, 0.1, -0.1, 1)]),
        Snapshot.from_events(2, [ev(1, 0, 0, 0.0, 0.6, 2), ev(0, 0, 1, 0.6, 0.0, 2)]),
        Snapshot.from_events(3, [ev(0, 1, 2, 0.7, 0.2, 3), ev(2, 1, 1, 0.2, 0.1, 3)]),
    ]


def toy_model_config(variant: VariantKind = VariantKind.FULL, **overrides) -> ModelConfig:
    values = dict(
        num_entities=3, num_relations=2, attr_arity=1, embed_dim=2, hidden_dim=3, variant=variant, seq_len=10
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def snapshots() -> list[Snapshot]:
    return toy_snapshots()


@pytest.fixture
def params():
    return init_params(toy_model_config(), seed=3)


@pytest.fixture
def small_split():
    """Tiny synthetic dataset for end-to-end tests."""
    return to_split(simulate(SynthConfig(num_entities=5, num_relations=2, num_ticks=12, density=0.6, seed=0)))
