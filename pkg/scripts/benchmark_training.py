from __future__ import annotations

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.autodiff import Adam
from app.dataio import normalize
from app.metrics.primitives import percentile_cont
from app.model import init_params
from app.schemas import SynthConfig, TrainConfig, VariantKind
from app.synth import simulate, to_split
from app.training import _batch_step, model_config_for, training_batches


def _measure(args: argparse.Namespace) -> tuple[list[float], int]:
    result = simulate(SynthConfig(num_entities=args.entities, num_ticks=args.ticks, seed=args.seed))
    split = normalize(to_split(result))
    config = TrainConfig(
        embed_dim=args.dim,
        hidden_dim=args.dim,
        seq_len=args.seq_len,
        batch_size=args.batch_size,
        variant=VariantKind(args.variant),
        seed=args.seed,
    )
    params = init_params(model_config_for(split, config), seed=config.seed)
    optimizer = Adam(params.tensors, lr=config.lr, clip_norm=config.clip_norm)
    batches = training_batches(split.train, config.batch_size, np.random.default_rng(args.seed))

    for batch in batches[: args.warmups]:
        _batch_step(split.train, batch, params, optimizer, config)
    samples = []
    for i in range(args.iterations):
        batch = batches[i % len(batches)]
        start = time.perf_counter()
        _batch_step(split.train, batch, params, optimizer, config)
        samples.append((time.perf_counter() - start) * 1000.0)
    return samples, len(batches)


def main() -> None:
    parser = argparse.ArgumentParser(description="Benchmark one training mini-batch step")
    parser.add_argument("--entities", type=int, default=20)
    parser.add_argument("--ticks", type=int, default=60)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--seq-len", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--variant", default="full", choices=[v.value for v in VariantKind])
    parser.add_argument("--iterations", type=int, default=20)
    parser.add_argument("--warmups", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    samples, per_epoch = _measure(args)
    print("training step benchmark")
    print(f"entities={args.entities} dim={args.dim} variant={args.variant} iterations={args.iterations}")
    print(f"p50_ms={percentile_cont(samples, 0.5):.2f}")
    print(f"p95_ms={percentile_cont(samples, 0.95):.2f}")
    print(f"mean_ms={statistics.fmean(samples):.2f}")
    print(f"batches_per_epoch={per_epoch} epoch_s={statistics.fmean(samples) * per_epoch / 1000.0:.2f}")


if __name__ == "__main__":
    main()
