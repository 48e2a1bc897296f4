"""Command-line entry point: generate, train, eval, forecast, ablate.

Exit codes: 0 success, 1 usage, 2 data, 3 runtime/numeric. Failures print
one JSON line ``{"error": {...}}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from app.config import configure_logging, load_config_file, merge_overrides
from app.dataio import DEFAULT_FRACTIONS, DatasetSplit, Normalizer, load_dataset
from app.errors import EXIT_OK, EXIT_USAGE, error_line, normalize_exception
from app.schemas import ApiError, ForecastConfig, SynthConfig, TrainConfig, VariantKind

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad fractions {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts  # type: ignore[return-value]


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True)
    parser.add_argument("--out")
    parser.add_argument("--config")
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--seq-len", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--variant", choices=[v.value for v in VariantKind])
    parser.add_argument("--fractions", type=_fractions)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dartnet", description="Joint attribute and link prediction on dynamic graphs")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    generate = commands.add_parser("generate", help="write a synthetic dataset")
    generate.add_argument("--out", required=True)
    generate.add_argument("--config")
    generate.add_argument("--entities", type=int)
    generate.add_argument("--relations", type=int)
    generate.add_argument("--ticks", type=int)
    generate.add_argument("--arity", type=int)
    generate.add_argument("--coupling", type=float)
    generate.add_argument("--noise", type=float)
    generate.add_argument("--density", type=float)
    generate.add_argument("--topology", choices=["similarity", "periodic", "star"])
    generate.add_argument("--period", type=int)
    generate.add_argument("--seed", type=int)

    train = commands.add_parser("train", help="train one model")
    _add_train_flags(train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint")
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--out")
    evaluate.add_argument("--split", choices=["valid", "test"], default="test")
    evaluate.add_argument("--fractions", type=_fractions)
    evaluate.add_argument("--baselines", action="store_true")

    forecast = commands.add_parser("forecast", help="multi-step forecast after the validation cut")
    forecast.add_argument("--data", required=True)
    forecast.add_argument("--checkpoint", required=True)
    forecast.add_argument("--out", required=True)
    forecast.add_argument("--horizon", type=int, default=1)
    forecast.add_argument("--top-k", type=int, default=5)
    forecast.add_argument("--fractions", type=_fractions)

    ablate = commands.add_parser("ablate", help="train every variant over several seeds")
    _add_train_flags(ablate)
    ablate.add_argument("--seeds", type=int, default=3)
    ablate.add_argument("--workers", type=int, default=1)
    return parser


# ---------------------------------------------------------------------------
# Validation helpers (nothing is written before these pass)
# ---------------------------------------------------------------------------


def _data_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise FileNotFoundError(2, "dataset directory not found", str(path))
    return path


def _check_out(out: Path, data: Path) -> None:
    resolved, source = out.resolve(), data.resolve()
    if resolved == source or source in resolved.parents:
        raise ValueError("USAGE_ERROR", {"reason": "output must not be inside the dataset directory", "out": str(out)})


def _train_config(args: argparse.Namespace, out_default: str) -> TrainConfig:
    base = load_config_file(args.config)
    if "lam" in base:
        base["lambda"] = base.pop("lam")
    flags: dict[str, Any] = {
        "lambda": args.lam,
        "hidden_dim": args.hidden_dim,
        "embed_dim": args.embed_dim,
        "seq_len": args.seq_len,
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "variant": args.variant,
        "checkpoint_dir": args.out,
    }
    merged = merge_overrides(base, flags)
    merged.setdefault("checkpoint_dir", out_default)
    return TrainConfig.model_validate(merged)


def _emit(payload: Any) -> None:
    print(json.dumps(payload, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_generate(args: argparse.Namespace) -> int:
    from app.synth import SIDECAR_FILE, generate

    flags = {
        "num_entities": args.entities,
        "num_relations": args.relations,
        "num_ticks": args.ticks,
        "attr_arity": args.arity,
        "coupling": args.coupling,
        "noise": args.noise,
        "density": args.density,
        "topology": args.topology,
        "period": args.period,
        "seed": args.seed,
    }
    config = SynthConfig.model_validate(merge_overrides(load_config_file(args.config), flags))
    events_path = generate(config, args.out)
    _emit({"events": str(events_path), "sidecar": str(Path(args.out) / SIDECAR_FILE)})
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    from app.store import file_sha256
    from app.training import train

    data = _data_dir(args.data)
    config = _train_config(args, "checkpoints")
    _check_out(Path(config.checkpoint_dir), data)
    split = load_dataset(data, args.fractions or DEFAULT_FRACTIONS)
    result = train(split, config)
    _emit(
        {
            "best_checkpoint": str(result.best_path) if result.best_path else None,
            "sha256": file_sha256(result.best_path) if result.best_path else None,
            "best_epoch": result.best_epoch,
            "best_val_mse": result.best_val_mse,
            "log": str(result.log_path),
        }
    )
    return EXIT_OK


def _load_for_checkpoint(args: argparse.Namespace) -> tuple[DatasetSplit, Any, Normalizer | None, str]:
    from app.store import file_sha256, load_checkpoint

    data = _data_dir(args.data)
    if args.out is not None:
        _check_out(Path(args.out), data)
    split = load_dataset(data, args.fractions or DEFAULT_FRACTIONS)
    params, payload = load_checkpoint(args.checkpoint)
    if params.config.num_entities < split.num_entities or params.config.num_relations < split.num_relations:
        raise ValueError(
            "CHECKPOINT_MISMATCH",
            {"entities": split.num_entities, "relations": split.num_relations},
        )
    normalizer = Normalizer.from_stats(payload.normalization) if payload.normalization else None
    return split, params, normalizer, file_sha256(args.checkpoint)


def _cmd_eval(args: argparse.Namespace) -> int:
    from app.metrics.calculators import write_per_entity_csv
    from app.metrics.report import evaluate_model

    split, params, normalizer, digest = _load_for_checkpoint(args)
    report = evaluate_model(
        params,
        split,
        args.split,
        normalizer=normalizer,
        baselines=args.baselines,
        metadata={"checkpoint_sha256": digest, "dataset": str(args.data)},
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        write_per_entity_csv(report.per_entity_mse, out / "per_entity_mse.csv")
    _emit(report.model_dump(mode="json"))
    return EXIT_OK


def _cmd_forecast(args: argparse.Namespace) -> int:
    from app.dataio import normalize
    from app.inference import forecast, write_forecast

    if args.horizon < 1:
        raise ValueError("INVALID_HORIZON", {"horizon": args.horizon})
    config = ForecastConfig(horizon=args.horizon, top_k=args.top_k)
    split, params, normalizer, _ = _load_for_checkpoint(args)
    data = normalize(split, normalizer)
    cut = data.valid[-1].timestamp
    history = [s for s in data.timeline() if s.timestamp <= cut]
    steps, _ = forecast(history, None, params, config)
    events_path, attributes_path = write_forecast(steps, args.out, data.vocab, data.normalizer)
    _emit({"events": str(events_path), "attributes": str(attributes_path), "steps": len(steps)})
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    from app.training import ablation_table, run_ablation

    data = _data_dir(args.data)
    config = _train_config(args, "ablation")
    if args.seeds < 1 or args.workers < 1:
        raise ValueError("USAGE_ERROR", {"seeds": args.seeds, "workers": args.workers})
    _check_out(Path(config.checkpoint_dir), data)
    split = load_dataset(data, args.fractions or DEFAULT_FRACTIONS)
    seeds = [config.seed + i for i in range(args.seeds)]
    rows = run_ablation(split, config, seeds, workers=args.workers)
    table = ablation_table(rows)
    out = Path(config.checkpoint_dir)
    payload = {
        "table": table,
        "runs": [
            {"variant": r.variant.value, "seed": r.seed, "val_mse": r.val_mse, "test_mse": r.test_mse}
            for r in rows
        ],
    }
    (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(payload)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "forecast": _cmd_forecast,
    "ablate": _cmd_ablate,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        error = ApiError(code="USAGE_ERROR", message="Invalid command line", details={"reason": str(exc)})
        print(error_line(error), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001
        error, exit_code = normalize_exception(exc)
        logger.debug("command failed command=%s", args.command, exc_info=True)
        print(error_line(error), file=sys.stderr)
        return exit_code


def main() -> None:
    configure_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
