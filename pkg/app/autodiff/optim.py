from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from app.autodiff.tape import Tensor

DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPSILON = 1e-8


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(
    grads: dict[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(total) or total <= max_norm or total == 0.0:
        return grads, total
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}, total


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, Tensor], AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Raises ``NON_FINITE_GRADIENT`` before touching anything if a gradient
    contains NaN or inf.
    """
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != tensor.shape:
            raise ValueError(
                "SHAPE_MISMATCH",
                {"kind": "adam_step", "param": name, "shapes": [list(tensor.shape), list(grad.shape)]},
            )
        if not np.all(np.isfinite(grad)):
            raise ValueError("NON_FINITE_GRADIENT", {"param": name})

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(tensor.values)
            v = np.zeros_like(tensor.values)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


class Adam:
    """Named-parameter Adam with optional global-norm clipping."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = DEFAULT_LR,
        clip_norm: float | None = 1.0,
    ) -> None:
        self.params = params
        self.clip_norm = clip_norm
        self.state = AdamState(lr=lr)

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        if self.clip_norm is not None:
            grads, norm = clip_grad_norm(grads, self.clip_norm)
        else:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        adam_step(self.params, grads, self.state)
        return norm
