from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any

DEFAULT_LOG_LEVEL = "info"

_LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def log_level_name() -> str:
    value = os.getenv("DARTNET_LOG", DEFAULT_LOG_LEVEL).strip().lower()
    return value if value in _LOG_LEVELS else DEFAULT_LOG_LEVEL


def configure_logging() -> None:
    logging.basicConfig(
        level=_LOG_LEVELS[log_level_name()],
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def load_config_file(path: str | Path | None) -> dict[str, Any]:
    """Read a JSON config file whose keys mirror the config models."""
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise ValueError("CONFIG_NOT_FOUND", {"path": str(config_path)})
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError("INVALID_CONFIG", {"path": str(config_path), "reason": str(exc)}) from exc
    if not isinstance(payload, dict):
        raise ValueError("INVALID_CONFIG", {"path": str(config_path), "reason": "not an object"})
    return payload


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Flags win over file values; ``None`` means the flag was not given."""
    merged = dict(base)
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged
