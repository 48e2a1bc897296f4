#!/usr/bin/env python3
"""Desk-scale trend checks on synthetic data.

Each check trains small models end to end and prints PASS/FAIL. Exit status
is 1 if any selected check fails.

Usage:
    python scripts/check_trends.py --only overfit link schedule
"""
from __future__ import annotations

import argparse
import statistics
import sys
import tempfile
import time
from collections.abc import Callable
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.config import configure_logging
from app.dataio import DatasetSplit, normalize
from app.inference import forecast
from app.metrics.report import evaluate_model
from app.model import ModelParams
from app.schemas import ForecastConfig, SynthConfig, Topology, TrainConfig, VariantKind
from app.store import load_checkpoint
from app.synth import simulate, to_split
from app.training import TrainResult, dataset_loss, run_ablation, train

# Wall-clock budget per training run, seconds on one CPU core.
OVERFIT_BUDGET = 300.0
RUN_BUDGET = 900.0


def _dataset(config: SynthConfig) -> DatasetSplit:
    return normalize(to_split(simulate(config)))


def _coupled(seed: int) -> DatasetSplit:
    return _dataset(SynthConfig(num_entities=20, num_ticks=200, coupling=0.7, noise=0.05, seed=seed))


def _timed_train(split: DatasetSplit, config: TrainConfig, timings: list[float]) -> TrainResult:
    start = time.perf_counter()
    result = train(split, config)
    timings.append(time.perf_counter() - start)
    return result


def _within(timings: list[float], budget: float) -> tuple[bool, str]:
    slowest = max(timings, default=0.0)
    return slowest <= budget, f"slowest_run_s={slowest:.1f} budget_s={budget:.0f}"


def _train_config(args: argparse.Namespace, workdir: Path, **overrides) -> TrainConfig:
    values = {
        "epochs": args.epochs,
        "embed_dim": args.dim,
        "hidden_dim": args.dim,
        "lr": args.lr,
        "checkpoint_dir": str(workdir),
        "patience": 10,
    }
    values.update(overrides)
    return TrainConfig.model_validate(values)


def check_overfit(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    split = _dataset(SynthConfig(num_entities=10, num_relations=3, num_ticks=50, seed=args.seed))
    config = _train_config(args, workdir / "overfit", epochs=500, patience=500, eval_every=50, lr=1e-2)
    timings: list[float] = []
    result = _timed_train(split, config, timings)
    final = dataset_loss(result.params, split.train, config.lam, config.seq_len)[0]
    ratio = result.initial_loss / max(final, 1e-300)
    fast, timing = _within(timings, OVERFIT_BUDGET)
    return ratio >= 100.0 and fast, f"initial={result.initial_loss:.4g} final={final:.4g} ratio={ratio:.1f} {timing}"


def check_beats_baselines(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    model, average, gru = [], [], []
    timings: list[float] = []
    for seed in range(3):
        split = _coupled(seed)
        result = _timed_train(split, _train_config(args, workdir / f"baselines_{seed}", seed=seed), timings)
        params, _ = load_checkpoint(result.best_path)
        report = evaluate_model(params, split, "test", baselines=True)
        model.append(report.attribute_mse)
        average.append(report.baselines["historic_average"])
        gru.append(report.baselines["nograph_gru_1layer"])
    m, a, g = statistics.median(model), statistics.median(average), statistics.median(gru)
    fast, timing = _within(timings, RUN_BUDGET)
    return m < a and m < g and fast, f"model={m:.4g} historic_average={a:.4g} nograph_gru={g:.4g} {timing}"


def check_variants(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    seeds = list(range(5))
    by_seed: dict[int, dict[VariantKind, float]] = {s: {} for s in seeds}
    timings: list[float] = []
    for seed in seeds:
        start = time.perf_counter()
        rows = run_ablation(_coupled(seed), _train_config(args, workdir / f"ablate_{seed}"), [seed], args.workers)
        # approximate per-run time; runs overlap when workers > 1
        timings.append((time.perf_counter() - start) / max(1, len(rows) // args.workers))
        for row in rows:
            by_seed[seed][row.variant] = row.test_mse
    wins = sum(
        all(by_seed[s][VariantKind.FULL] <= by_seed[s][v] for v in VariantKind if v is not VariantKind.FULL)
        for s in seeds
    )
    strict = sum(by_seed[s][VariantKind.FULL] < by_seed[s][VariantKind.TIME_INDEPENDENT] for s in seeds)
    fast, timing = _within(timings, RUN_BUDGET)
    return wins >= 3 and strict == 5 and fast, f"full_best_in={wins}/5 below_time_independent_in={strict}/5 {timing}"


def check_lambda(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    medians = []
    timings: list[float] = []
    for lam in (0.1, 1.0, 10.0):
        scores = []
        for seed in range(3):
            config = _train_config(args, workdir / f"lambda_{lam}_{seed}", seed=seed, lam=lam)
            scores.append(_timed_train(_coupled(seed), config, timings).best_val_mse)
        medians.append(statistics.median(scores))
    ok = all(later <= earlier for earlier, later in zip(medians, medians[1:]))
    fast, timing = _within(timings, RUN_BUDGET)
    return ok and fast, "median_val_mse=" + ",".join(f"{m:.4g}" for m in medians) + f" {timing}"


def _periodic(seed: int) -> DatasetSplit:
    config = SynthConfig(
        num_entities=10, num_relations=1, num_ticks=60, topology=Topology.PERIODIC, period=2, noise=0.0, seed=seed
    )
    return _dataset(config)


def _train_periodic(args: argparse.Namespace, workdir: Path, timings: list[float]) -> tuple[DatasetSplit, ModelParams]:
    split = _periodic(args.seed)
    config = _train_config(args, workdir, epochs=max(args.epochs, 200), lr=1e-2)
    result = _timed_train(split, config, timings)
    params, _ = load_checkpoint(result.best_path)
    return split, params


def check_link(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    timings: list[float] = []
    split, params = _train_periodic(args, workdir / "link", timings)
    report = evaluate_model(params, split, "test")
    hits1 = report.hits.get(1, 0.0)
    fast, timing = _within(timings, RUN_BUDGET)
    return (report.mrr or 0.0) >= 0.9 and hits1 >= 0.8 and fast, f"mrr={report.mrr:.3f} hits@1={hits1:.3f} {timing}"


def check_schedule(args: argparse.Namespace, workdir: Path) -> tuple[bool, str]:
    """Top-1 forecast edges over three ticks after the validation cut follow the generator's schedule."""
    timings: list[float] = []
    split, params = _train_periodic(args, workdir / "schedule", timings)
    cut = split.valid[-1].timestamp
    history = [s for s in split.timeline() if s.timestamp <= cut]
    steps, _ = forecast(history, None, params, ForecastConfig(horizon=3, top_k=1))
    n = split.num_entities
    mismatches = 0
    for step in steps:
        for event in step.snapshot.events:
            if event.tail != (event.head + 1 + step.tick % 2) % n:
                mismatches += 1
    fast, timing = _within(timings, RUN_BUDGET)
    return mismatches == 0 and fast, f"steps={len(steps)} mismatched_edges={mismatches} {timing}"


CHECKS: dict[str, Callable[[argparse.Namespace, Path], tuple[bool, str]]] = {
    "overfit": check_overfit,
    "baselines": check_beats_baselines,
    "variants": check_variants,
    "lambda": check_lambda,
    "link": check_link,
    "schedule": check_schedule,
}


def main() -> int:
    parser = argparse.ArgumentParser(description="Run synthetic trend checks")
    parser.add_argument("--only", nargs="*", choices=sorted(CHECKS), default=None)
    parser.add_argument("--epochs", type=int, default=60)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--lr", type=float, default=5e-3)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    configure_logging()

    failures = 0
    with tempfile.TemporaryDirectory(prefix="dartnet-trends-") as tmp:
        for name in args.only or list(CHECKS):
            start = time.perf_counter()
            ok, detail = CHECKS[name](args, Path(tmp))
            elapsed = time.perf_counter() - start
            failures += 0 if ok else 1
            print(f"{'PASS' if ok else 'FAIL'} {name} {detail} seconds={elapsed:.1f}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
