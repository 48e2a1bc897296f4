"""Gated recurrent unit cell built from autodiff primitives.

    r  = σ(x·W_xr + b_r + h·W_hr)
    z  = σ(x·W_xz + b_z + h·W_hz)
    n  = tanh(x·W_xn + b_xn + r ⊙ (h·W_hn + b_hn))
    h' = (1 - z) ⊙ n + z ⊙ h
"""
from __future__ import annotations

from collections.abc import Mapping

from app.autodiff import Tensor, add, affine, hadamard, matmul, scale, sigmoid, tanh

GRU_WEIGHTS = ("w_xr", "w_xz", "w_xn", "w_hr", "w_hz", "w_hn")
GRU_BIASES = ("b_r", "b_z", "b_xn", "b_hn")


def gru_param_shapes(prefix: str, input_dim: int, hidden_dim: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name in GRU_WEIGHTS:
        rows = input_dim if name.startswith("w_x") else hidden_dim
        shapes[f"{prefix}.{name}"] = (rows, hidden_dim)
    for name in GRU_BIASES:
        shapes[f"{prefix}.{name}"] = (hidden_dim,)
    return shapes


def gru_cell(x: Tensor, h: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """One step for a single vector or a batch of rows."""

    def p(name: str) -> Tensor:
        return params[f"{prefix}.{name}"]

    reset = sigmoid(add(affine(x, p("w_xr"), p("b_r")), matmul(h, p("w_hr"))))
    update = sigmoid(add(affine(x, p("w_xz"), p("b_z")), matmul(h, p("w_hz"))))
    candidate = tanh(
        add(affine(x, p("w_xn"), p("b_xn")), hadamard(reset, affine(h, p("w_hn"), p("b_hn"))))
    )
    return add(candidate, hadamard(update, add(h, scale(candidate, -1.0))))
