"""Reverse-mode automatic differentiation over dense float64 arrays."""

from app.autodiff.gradcheck import GradCheckReport, grad_check
from app.autodiff.ops import (
    KINDS,
    add,
    affine,
    apply,
    concat,
    concat_rows,
    cross_entropy,
    gather,
    hadamard,
    matmul,
    mean_rows,
    mse,
    row,
    scale,
    segment_mean,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from app.autodiff.optim import Adam, AdamState, adam_step, clip_grad_norm
from app.autodiff.tape import Gradients, Tape, Tensor, active_tape, as_tensor, zeros


def backward(root: Tensor) -> Gradients:
    """Differentiate ``root`` on the tape it was recorded on."""
    if root.tape is None:
        tape = active_tape()
        if tape is None:
            raise ValueError("NO_ACTIVE_TAPE")
        return tape.backward(root)
    return root.tape.backward(root)


__all__ = [
    "KINDS",
    "Adam",
    "AdamState",
    "GradCheckReport",
    "Gradients",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "affine",
    "apply",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "concat",
    "concat_rows",
    "cross_entropy",
    "gather",
    "grad_check",
    "hadamard",
    "matmul",
    "mean_rows",
    "mse",
    "row",
    "scale",
    "segment_mean",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
    "zeros",
]
