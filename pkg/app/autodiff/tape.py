"""Define-by-run tape for reverse-mode differentiation.

A ``Tape`` is opened per training step (``with Tape() as tape:``). While it is
active on the current thread, every primitive whose inputs require gradients
appends a node; ``tape.backward(root)`` then walks the nodes in reverse.
Outside an active tape primitives only compute values.
"""
from __future__ import annotations

import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

_LOCAL = threading.local()

Accumulate = Callable[[int, np.ndarray, Any], None]
BackwardFn = Callable[[np.ndarray, Accumulate], None]


class Tensor:
    """Dense float64 array that may participate in differentiation."""

    __slots__ = ("values", "requires_grad", "node_id", "tape", "name")

    def __init__(
        self,
        values: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(value: Tensor | Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    shape: tuple[int, ...]
    backward: BackwardFn | None


@dataclass
class Gradients:
    """Result of ``Tape.backward``: gradients keyed by tape node."""

    tape: "Tape"
    by_node: dict[int, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        if tensor.tape is self.tape and tensor.node_id is not None:
            grad = self.by_node.get(tensor.node_id)
            if grad is not None:
                return grad
        return np.zeros(tensor.shape, dtype=np.float64)

    def for_params(self, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return {name: self[tensor] for name, tensor in params.items()}


class Tape:
    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._previous: Tape | None = None

    def __enter__(self) -> "Tape":
        self._previous = active_tape()
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc_info: object) -> None:
        _LOCAL.tape = self._previous
        self._previous = None

    def _register_leaf(self, tensor: Tensor) -> int:
        node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), tensor.shape, None))
        tensor.tape = self
        tensor.node_id = node_id
        return node_id

    def input_id(self, tensor: Tensor) -> int | None:
        if not tensor.requires_grad:
            return None
        if tensor.tape is not self or tensor.node_id is None:
            return self._register_leaf(tensor)
        return tensor.node_id

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        out: Tensor,
        backward: BackwardFn,
    ) -> Tensor:
        input_ids = tuple(self.input_id(t) for t in inputs)
        if all(i is None for i in input_ids):
            return out
        node_id = len(self.nodes)
        self.nodes.append(_Node(kind, input_ids, out.shape, backward))
        out.requires_grad = True
        out.tape = self
        out.node_id = node_id
        return out

    def backward(self, root: Tensor) -> Gradients:
        if root.values.size != 1 or root.values.ndim > 1:
            raise ValueError("NON_SCALAR_ROOT", {"shape": list(root.shape)})
        grads = Gradients(self)
        if root.tape is not self or root.node_id is None:
            return grads
        by_node = grads.by_node
        by_node[root.node_id] = np.ones(root.shape, dtype=np.float64)

        for node_id in range(root.node_id, -1, -1):
            node = self.nodes[node_id]
            grad = by_node.get(node_id)
            if grad is None or node.backward is None:
                continue

            def accumulate(
                position: int,
                value: np.ndarray,
                index: Any = None,
                _inputs: tuple[int | None, ...] = node.inputs,
            ) -> None:
                target = _inputs[position]
                if target is None:
                    return
                current = by_node.get(target)
                if current is None:
                    current = np.zeros(self.nodes[target].shape, dtype=np.float64)
                    by_node[target] = current
                if index is None:
                    current += value
                else:
                    np.add.at(current, index, value)

            node.backward(grad, accumulate)
        return grads


def active_tape() -> Tape | None:
    return getattr(_LOCAL, "tape", None)


def record(
    kind: str,
    inputs: Iterable[Tensor],
    values: np.ndarray,
    backward: BackwardFn,
) -> Tensor:
    out = Tensor(values)
    tape = active_tape()
    inputs = tuple(inputs)
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    return tape.record(kind, inputs, out, backward)
