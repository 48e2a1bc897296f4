"""Domain error tokens and their normalization into one-line payloads.

Library code raises ``ValueError("TOKEN", details)`` / ``KeyError("TOKEN")``;
the CLI turns any exception into an ``ApiError`` dict plus an exit code.
"""
from __future__ import annotations

import json
from typing import Any

from pydantic import ValidationError

from app.schemas import ApiError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


_DOMAIN_ERRORS: dict[str, tuple[str, int]] = {
    # usage
    "USAGE_ERROR": ("Invalid command line", EXIT_USAGE),
    "INVALID_CONFIG": ("Configuration failed validation", EXIT_USAGE),
    "CONFIG_NOT_FOUND": ("Config file not found", EXIT_USAGE),
    "INVALID_FRACTIONS": ("Split fractions must be positive and sum to 1", EXIT_USAGE),
    "INVALID_HORIZON": ("Forecast horizon must be at least 1", EXIT_USAGE),
    # data
    "DATA_NOT_FOUND": ("Dataset path not found", EXIT_DATA),
    "MALFORMED_LINE": ("Event file line could not be parsed", EXIT_DATA),
    "ARITY_MISMATCH": ("Attribute vector has the wrong arity", EXIT_DATA),
    "ATTRIBUTE_CONFLICT": ("Entity has conflicting attributes within one tick", EXIT_DATA),
    "UNSORTED_EVENTS": ("Events must be sorted by timestamp", EXIT_DATA),
    "TOO_FEW_SNAPSHOTS": ("At least three snapshots are required to split", EXIT_DATA),
    "EMPTY_SPLIT": ("A required split is empty", EXIT_DATA),
    "UNKNOWN_ENTITY": ("Entity id is outside the vocabulary", EXIT_DATA),
    "UNKNOWN_RELATION": ("Relation id is outside the vocabulary", EXIT_DATA),
    "ENTITY_NOT_OBSERVED": ("Entity has no attributes in this snapshot", EXIT_DATA),
    "CHECKPOINT_NOT_FOUND": ("Checkpoint file not found", EXIT_DATA),
    "CHECKPOINT_MISMATCH": ("Checkpoint does not match the model dimensions", EXIT_DATA),
    "EMPTY_ALIGNMENT": ("No aligned prediction/ground-truth pairs", EXIT_DATA),
    "MISSING_RANKING": ("A ground-truth query has no ranking", EXIT_DATA),
    "EMPTY_SERIES": ("Entity series is empty", EXIT_DATA),
    # runtime / numeric
    "SHAPE_MISMATCH": ("Tensor shapes do not conform", EXIT_RUNTIME),
    "INDEX_OUT_OF_RANGE": ("Row index outside the table", EXIT_RUNTIME),
    "CLASS_OUT_OF_RANGE": ("Class index outside the logits", EXIT_RUNTIME),
    "EMPTY_MEAN": ("Mean over zero rows", EXIT_RUNTIME),
    "NON_SCALAR_ROOT": ("Backward root must be scalar", EXIT_RUNTIME),
    "NO_ACTIVE_TAPE": ("No tape is recording", EXIT_RUNTIME),
    "UNKNOWN_KIND": ("Unknown primitive kind", EXIT_RUNTIME),
    "NON_FINITE_GRADIENT": ("Gradient contains NaN or inf", EXIT_RUNTIME),
    "NON_FINITE_LOSS": ("Loss became NaN or inf", EXIT_RUNTIME),
    "WINDOW_TOO_SHORT": ("Loss window needs at least two snapshots", EXIT_RUNTIME),
    "TICK_REGRESSION": ("Snapshot tick does not advance the history", EXIT_RUNTIME),
}


def normalize_exception(exc: BaseException) -> tuple[ApiError, int]:
    if isinstance(exc, ValidationError):
        return (
            ApiError(
                code="INVALID_CONFIG",
                message=_DOMAIN_ERRORS["INVALID_CONFIG"][0],
                details={"errors": [e["msg"] for e in exc.errors()]},
            ),
            EXIT_USAGE,
        )
    if isinstance(exc, FileNotFoundError):
        return (
            ApiError(
                code="DATA_NOT_FOUND",
                message=_DOMAIN_ERRORS["DATA_NOT_FOUND"][0],
                details={"path": str(exc.filename)} if exc.filename else None,
            ),
            EXIT_DATA,
        )

    token = exc.args[0] if exc.args else str(exc)
    token_str = str(token)
    if token_str in _DOMAIN_ERRORS:
        message, exit_code = _DOMAIN_ERRORS[token_str]
        details = exc.args[1] if len(exc.args) > 1 and isinstance(exc.args[1], dict) else None
        return ApiError(code=token_str, message=message, details=details), exit_code

    return (
        ApiError(
            code="INVARIANT_VIOLATION",
            message="Operation failed due to invalid state",
            details={"type": type(exc).__name__, "reason": str(exc)},
        ),
        EXIT_RUNTIME,
    )


def error_line(error: ApiError) -> str:
    """Single-line machine-parsable rendering used on stderr."""
    return json.dumps({"error": error.model_dump(exclude_none=True)}, sort_keys=True, default=str)


def error_code(exc: BaseException) -> str:
    return normalize_exception(exc)[0].code


def details_of(exc: BaseException) -> dict[str, Any] | None:
    return normalize_exception(exc)[0].details
