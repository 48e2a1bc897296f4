from __future__ import annotations

import json

import pytest

from app.cli import build_parser, run
from app.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE


def _generate(tmp_path, capsys, name: str = "data") -> str:
    out = tmp_path / name
    code = run(
        ["generate", "--out", str(out), "--entities", "5", "--relations", "2", "--ticks", "12", "--density", "0.6"]
    )
    capsys.readouterr()
    assert code == EXIT_OK
    return str(out)


def _train(data: str, out, capsys, *extra: str) -> dict:
    code = run(
        ["train", "--data", data, "--out", str(out), "--epochs", "2", "--embed-dim", "4", "--hidden-dim", "4", *extra]
    )
    captured = capsys.readouterr()
    assert code == EXIT_OK, captured.err
    return json.loads(captured.out)


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def test_generate_writes_dataset(tmp_path, capsys) -> None:
    code = run(["generate", "--out", str(tmp_path / "synth"), "--ticks", "20", "--seed", "3"])

    payload = json.loads(capsys.readouterr().out)
    assert code == EXIT_OK
    assert (tmp_path / "synth" / "events.tsv").is_file()
    assert payload["sidecar"].endswith("synth.json")
    sidecar = json.loads((tmp_path / "synth" / "synth.json").read_text(encoding="utf-8"))
    assert sidecar["config"]["num_ticks"] == 20
    assert sidecar["config"]["seed"] == 3


def test_generate_reads_config_file_and_flags_win(tmp_path, capsys) -> None:
    config = tmp_path / "synth.json"
    config.write_text(json.dumps({"num_entities": 4, "num_ticks": 5, "seed": 9}), encoding="utf-8")

    code = run(["generate", "--out", str(tmp_path / "d"), "--config", str(config), "--ticks", "6"])

    capsys.readouterr()
    sidecar = json.loads((tmp_path / "d" / "synth.json").read_text(encoding="utf-8"))
    assert code == EXIT_OK
    assert sidecar["config"]["num_entities"] == 4
    assert sidecar["config"]["num_ticks"] == 6
    assert sidecar["config"]["seed"] == 9


def test_train_twice_gives_identical_checkpoints(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    first = _train(data, tmp_path / "a", capsys)
    second = _train(data, tmp_path / "b", capsys)

    assert first["sha256"] == second["sha256"]
    assert first["best_checkpoint"].endswith("best.json")
    assert (tmp_path / "a" / "train_log.jsonl").is_file()


def test_train_config_file_accepts_lam_key(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"lam": 0.5, "epochs": 1}), encoding="utf-8")

    _train(data, tmp_path / "run", capsys, "--config", str(config))

    record = json.loads((tmp_path / "run" / "train_log.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert record["lambda"] == 0.5


def test_eval_and_forecast(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)
    checkpoint = _train(data, tmp_path / "ckpt", capsys)["best_checkpoint"]

    code = run(["eval", "--data", data, "--checkpoint", checkpoint, "--out", str(tmp_path / "eval")])
    report = json.loads(capsys.readouterr().out)

    assert code == EXIT_OK
    assert report["attribute_mse"] >= 0.0
    assert report["metadata"]["checkpoint_sha256"]
    assert (tmp_path / "eval" / "report.json").is_file()
    assert (tmp_path / "eval" / "per_entity_mse.csv").is_file()

    code = run(
        ["forecast", "--data", data, "--checkpoint", checkpoint, "--out", str(tmp_path / "fc"), "--horizon", "3"]
    )
    payload = json.loads(capsys.readouterr().out)

    assert code == EXIT_OK
    assert payload["steps"] == 3
    lines = (tmp_path / "fc" / "forecast.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# predicted=true"
    assert len(lines) > 1
    attributes = json.loads((tmp_path / "fc" / "forecast_attributes.json").read_text(encoding="utf-8"))
    assert len(attributes["ticks"]) == 3


def test_ablate_writes_table(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(
        [
            "ablate", "--data", data, "--out", str(tmp_path / "abl"), "--seeds", "1",
            "--epochs", "1", "--embed-dim", "3", "--hidden-dim", "3",
        ]
    )
    payload = json.loads(capsys.readouterr().out)

    assert code == EXIT_OK
    assert [row["variant"] for row in payload["table"]] == ["full", "decoupled", "shared_history", "time_independent"]
    assert (tmp_path / "abl" / "ablation.json").is_file()


# ---------------------------------------------------------------------------
# Failures
# ---------------------------------------------------------------------------


def test_unknown_flag_is_a_usage_error_and_writes_nothing(tmp_path, capsys) -> None:
    code = run(["generate", "--out", str(tmp_path / "x"), "--bogus"])

    error = _error(capsys)
    assert code == EXIT_USAGE
    assert error["code"] == "USAGE_ERROR"
    assert not (tmp_path / "x").exists()


def test_missing_command_is_a_usage_error(capsys) -> None:
    assert run([]) == EXIT_USAGE
    assert _error(capsys)["code"] == "USAGE_ERROR"


def test_missing_dataset(tmp_path, capsys) -> None:
    code = run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out")])

    assert code == EXIT_DATA
    assert _error(capsys)["code"] == "DATA_NOT_FOUND"
    assert not (tmp_path / "out").exists()


def test_output_inside_dataset_is_refused(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(["train", "--data", data, "--out", str(tmp_path / "data" / "ckpt")])

    assert code == EXIT_USAGE
    assert _error(capsys)["code"] == "USAGE_ERROR"


def test_invalid_config_value(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(["train", "--data", data, "--out", str(tmp_path / "o"), "--lambda", "-1"])

    assert code == EXIT_USAGE
    assert _error(capsys)["code"] == "INVALID_CONFIG"


def test_missing_config_file(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(["train", "--data", data, "--config", str(tmp_path / "none.json")])

    assert code == EXIT_USAGE
    assert _error(capsys)["code"] == "CONFIG_NOT_FOUND"


def test_missing_checkpoint(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(["eval", "--data", data, "--checkpoint", str(tmp_path / "missing.json")])

    assert code == EXIT_DATA
    assert _error(capsys)["code"] == "CHECKPOINT_NOT_FOUND"


def test_zero_horizon(tmp_path, capsys) -> None:
    data = _generate(tmp_path, capsys)

    code = run(
        ["forecast", "--data", data, "--checkpoint", "x.json", "--out", str(tmp_path / "f"), "--horizon", "0"]
    )

    assert code == EXIT_USAGE
    assert _error(capsys)["code"] == "INVALID_HORIZON"


def test_help_exits_cleanly(capsys) -> None:
    assert run(["--help"]) == EXIT_OK
    assert "generate" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["generate", "train", "eval", "forecast", "ablate"])
def test_parser_knows_every_command(command: str) -> None:
    parser = build_parser()
    subparsers = next(a for a in parser._actions if a.dest == "command")

    assert command in subparsers.choices
