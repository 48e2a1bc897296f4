"""Differentiable primitives.

Every primitive is reachable through ``apply(kind, *inputs, **attrs)`` and as
a plain function of the same name. Shapes are checked up front; a mismatch
raises ``ValueError("SHAPE_MISMATCH", {...})`` naming the kind and shapes.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from app.autodiff.tape import Tensor, as_tensor, record


def _shape_error(kind: str, *tensors: Tensor, **extra: Any) -> ValueError:
    details: dict[str, Any] = {"kind": kind, "shapes": [list(t.shape) for t in tensors]}
    details.update(extra)
    return ValueError("SHAPE_MISMATCH", details)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim not in (1, 2) or b.values.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    av, bv = a.values, b.values

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g @ bv.T)
        if av.ndim == 1:
            acc(1, np.outer(av, g))
        else:
            acc(1, av.T @ g)

    return record("matmul", (a, b), av @ bv, backward)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with the bias repeated over rows of ``x``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if (
        x.values.ndim not in (1, 2)
        or weight.values.ndim != 2
        or x.shape[-1] != weight.shape[0]
        or bias.shape != (weight.shape[1],)
    ):
        raise _shape_error("affine", x, weight, bias)
    xv, wv = x.values, weight.values

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g @ wv.T)
        if xv.ndim == 1:
            acc(1, np.outer(xv, g))
            acc(2, g)
        else:
            acc(1, xv.T @ g)
            acc(2, g.sum(axis=0))

    return record("affine", (x, weight, bias), xv @ wv + bias.values, backward)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("add", a, b)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g)
        acc(1, g)

    return record("add", (a, b), a.values + b.values, backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("hadamard", a, b)
    av, bv = a.values, b.values

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g * bv)
        acc(1, g * av)

    return record("hadamard", (a, b), av * bv, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g * factor)

    return record("scale", (x,), x.values * factor, backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.values)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g * out * (1.0 - out))

    return record("sigmoid", (x,), out, backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.values)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g * (1.0 - out * out))

    return record("tanh", (x,), out, backward)


# ---------------------------------------------------------------------------
# Structural
# ---------------------------------------------------------------------------


def concat(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ValueError("SHAPE_MISMATCH", {"kind": "concat", "shapes": []})
    lead = parts[0].shape[:-1]
    if any(p.values.ndim == 0 or p.shape[:-1] != lead for p in parts):
        raise _shape_error("concat", *parts)
    widths = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0, *widths])

    def backward(g: np.ndarray, acc) -> None:
        for position, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            acc(position, g[..., lo:hi])

    return record("concat", parts, np.concatenate([p.values for p in parts], axis=-1), backward)


def stack(*vectors: Tensor) -> Tensor:
    """Stack equal-length vectors as the rows of a matrix."""
    rows = [as_tensor(v) for v in vectors]
    if not rows or any(r.values.ndim != 1 or r.shape != rows[0].shape for r in rows):
        raise _shape_error("stack", *rows)

    def backward(g: np.ndarray, acc) -> None:
        for position in range(len(rows)):
            acc(position, g[position])

    return record("stack", rows, np.stack([r.values for r in rows]), backward)


def concat_rows(*matrices: Tensor) -> Tensor:
    """Concatenate matrices of equal width along the first axis."""
    parts = [as_tensor(m) for m in matrices]
    if not parts or any(p.values.ndim != 2 or p.shape[1] != parts[0].shape[1] for p in parts):
        raise _shape_error("concat_rows", *parts)
    bounds = np.cumsum([0, *(p.shape[0] for p in parts)])

    def backward(g: np.ndarray, acc) -> None:
        for position, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            acc(position, g[lo:hi])

    return record("concat_rows", parts, np.concatenate([p.values for p in parts], axis=0), backward)


def row(matrix: Tensor, index: int) -> Tensor:
    matrix = as_tensor(matrix)
    if matrix.values.ndim != 2 or not 0 <= index < matrix.shape[0]:
        raise _shape_error("row", matrix, index=index)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g, index)

    return record("row", (matrix,), matrix.values[index].copy(), backward)


def gather(table: Tensor, indices: Sequence[int] | np.ndarray) -> Tensor:
    """Rows of ``table`` at ``indices`` (embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.values.ndim != 2 or idx.ndim != 1:
        raise _shape_error("gather", table)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError(
            "INDEX_OUT_OF_RANGE",
            {"kind": "gather", "rows": table.shape[0], "max_index": int(idx.max())},
        )

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g, idx)

    return record("gather", (table,), table.values[idx], backward)


def mean_rows(matrix: Tensor) -> Tensor:
    matrix = as_tensor(matrix)
    if matrix.values.ndim != 2:
        raise _shape_error("mean_rows", matrix)
    count = matrix.shape[0]
    if count == 0:
        raise ValueError("EMPTY_MEAN", {"kind": "mean_rows"})

    def backward(g: np.ndarray, acc) -> None:
        acc(0, np.broadcast_to(g / count, matrix.shape))

    return record("mean_rows", (matrix,), matrix.values.mean(axis=0), backward)


def segment_mean(
    matrix: Tensor,
    segments: Sequence[int] | np.ndarray,
    num_segments: int,
) -> Tensor:
    """Mean of the rows sharing each segment id; every segment must be nonempty."""
    matrix = as_tensor(matrix)
    seg = np.asarray(segments, dtype=np.int64)
    if matrix.values.ndim != 2 or seg.shape != (matrix.shape[0],):
        raise _shape_error("segment_mean", matrix, segments=len(seg))
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if counts.shape[0] != num_segments or np.any(counts == 0):
        raise ValueError("EMPTY_MEAN", {"kind": "segment_mean"})
    sums = np.zeros((num_segments, matrix.shape[1]), dtype=np.float64)
    np.add.at(sums, seg, matrix.values)

    def backward(g: np.ndarray, acc) -> None:
        acc(0, (g / counts[:, None])[seg])

    return record("segment_mean", (matrix,), sums / counts[:, None], backward)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape or pred.size == 0:
        raise _shape_error("mse", pred, target)
    diff = pred.values - target.values
    count = diff.size

    def backward(g: np.ndarray, acc) -> None:
        acc(0, g * 2.0 * diff / count)
        acc(1, -g * 2.0 * diff / count)

    return record("mse", (pred, target), np.array(np.mean(diff * diff)), backward)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def cross_entropy(logits: Tensor, class_index: int | Sequence[int] | np.ndarray) -> Tensor:
    """``-log softmax(logits)[class_index]``, summed over rows for a matrix."""
    logits = as_tensor(logits)
    idx = np.asarray(class_index, dtype=np.int64)
    if logits.values.ndim == 1 and idx.ndim == 0:
        rows_idx = np.arange(1)
        lv = logits.values[None, :]
        idx = idx.reshape(1)
    elif logits.values.ndim == 2 and idx.shape == (logits.shape[0],):
        rows_idx = np.arange(logits.shape[0])
        lv = logits.values
    else:
        raise _shape_error("cross_entropy", logits, classes=idx.shape)
    num_classes = lv.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(
            "CLASS_OUT_OF_RANGE",
            {"kind": "cross_entropy", "classes": num_classes, "index": idx.tolist()},
        )
    log_probs = _log_softmax(lv)
    loss = -log_probs[rows_idx, idx].sum()

    def backward(g: np.ndarray, acc) -> None:
        grad = np.exp(log_probs)
        grad[rows_idx, idx] -= 1.0
        acc(0, g * grad.reshape(logits.shape))

    return record("cross_entropy", (logits,), np.array(loss), backward)


_KINDS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "concat": concat,
    "concat_rows": concat_rows,
    "scale": scale,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "hadamard": hadamard,
    "mean_rows": mean_rows,
    "affine": affine,
    "gather": gather,
    "stack": stack,
    "row": row,
    "segment_mean": segment_mean,
    "mse": mse,
    "cross_entropy": cross_entropy,
}

KINDS = frozenset(_KINDS)


def apply(kind: str, *inputs: Any, **attrs: Any) -> Tensor:
    fn = _KINDS.get(kind)
    if fn is None:
        raise ValueError("UNKNOWN_KIND", {"kind": kind})
    return fn(*inputs, **attrs)
