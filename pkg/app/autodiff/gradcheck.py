from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np
from pydantic import BaseModel

from app.autodiff.tape import Tape, Tensor

# Denominator floor for the relative error, so near-zero gradients compare
# on an absolute scale.
_REL_FLOOR = 1e-6


class GradCheckReport(BaseModel):
    passed: bool
    max_rel_error: float
    checked: int
    non_finite: bool = False
    message: str | None = None


def grad_check(
    fn: Callable[..., Tensor],
    point: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``fn`` receives the tensors of ``point`` positionally and must return a
    scalar tensor. Non-finite values at any perturbation are reported, not raised.
    """
    tensors = [point] if isinstance(point, Tensor) else list(point)
    for tensor in tensors:
        tensor.requires_grad = True

    try:
        with Tape() as tape:
            root = fn(*tensors)
            grads = tape.backward(root)
    except FloatingPointError as exc:
        return GradCheckReport(
            passed=False, max_rel_error=math.inf, checked=0, non_finite=True, message=str(exc)
        )
    if not np.all(np.isfinite(root.values)):
        return GradCheckReport(
            passed=False, max_rel_error=math.inf, checked=0, non_finite=True,
            message="non-finite value at base point",
        )
    analytic = [grads[t].copy() for t in tensors]

    max_err = 0.0
    checked = 0
    with np.errstate(all="ignore"):
        for tensor, grad in zip(tensors, analytic):
            flat = tensor.values.reshape(-1)
            grad_flat = grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                upper = fn(*tensors).item()
                flat[i] = original - eps
                lower = fn(*tensors).item()
                flat[i] = original
                if not (math.isfinite(upper) and math.isfinite(lower)):
                    return GradCheckReport(
                        passed=False,
                        max_rel_error=math.inf,
                        checked=checked,
                        non_finite=True,
                        message=f"non-finite value perturbing {tensor.name or 'tensor'}[{i}]",
                    )
                numeric = (upper - lower) / (2.0 * eps)
                a = float(grad_flat[i])
                denom = max(abs(a), abs(numeric), _REL_FLOOR)
                max_err = max(max_err, abs(a - numeric) / denom)
                checked += 1

    return GradCheckReport(passed=max_err <= tol, max_rel_error=max_err, checked=checked)
