"""Rank-4 tensors with a recording tape for reverse-mode differentiation.

Element type is a process-wide mode, not a per-tensor property: float32 for
training speed ("train32"), float64 for finite-difference checking
("check64").  Everything here is plain numpy underneath; execution is
serial and bit-deterministic for identical inputs.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, UsageError

_MODES = {"train32": np.float32, "check64": np.float64}
_dtype = np.dtype(np.float32)


def set_precision(mode: str) -> None:
    """Switch the element type for all tensors created afterwards."""
    global _dtype
    if mode not in _MODES:
        raise UsageError(f"unknown precision mode {mode!r}, expected one of {sorted(_MODES)}")
    _dtype = np.dtype(_MODES[mode])


def precision() -> str:
    return "train32" if _dtype == np.float32 else "check64"


def dtype() -> np.dtype:
    return _dtype


class Tensor:
    """Dense (N, C, H, W) array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=_dtype)
        if arr.ndim != 4:
            raise ConfigError(f"tensors are rank-4 (N, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def scalar(value: float, requires_grad: bool = False) -> Tensor:
    """A rank-4 scalar of shape (1, 1, 1, 1)."""
    return Tensor(np.full((1, 1, 1, 1), value, dtype=_dtype), requires_grad)


class Node:
    """One recorded operation: its input/output tensors and how to push
    the output gradient back to the inputs."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], None]):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Tape of operations in forward execution order.

    Forward order is a topological order by construction, so backward
    simply walks the list in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, inputs: tuple[Tensor, ...], output: Tensor,
               backward_fn: Callable[[np.ndarray], None]) -> None:
        self.nodes.append(Node(inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every tensor the loss depends on.

        The loss must be a scalar tensor produced while this graph was
        recording.  Gradients accumulate into existing buffers; recorded
        tensors the loss cannot reach end up with zero gradients.
        """
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            node.backward_fn(g)
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


_active: Graph | None = None


@contextmanager
def record(graph: Graph | None = None) -> Iterator[Graph]:
    """Record all ops executed in this block onto one tape."""
    global _active
    g = graph if graph is not None else Graph()
    prev = _active
    _active = g
    try:
        yield g
    finally:
        _active = prev


def active_graph() -> Graph | None:
    return _active


def push_node(inputs: tuple[Tensor, ...], output: Tensor,
              backward_fn: Callable[[np.ndarray], None]) -> None:
    """Record a backward closure if a tape is active and grads are wanted."""
    if _active is not None and output.requires_grad:
        _active.record(inputs, output, backward_fn)


def backward(loss: Tensor, graph: Graph) -> None:
    graph.backward(loss)


class Parameter:
    """Named trainable tensor plus its momentum buffer."""

    __slots__ = ("name", "tensor", "momentum")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.momentum = np.zeros_like(self.tensor.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def parameter_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-parameter stream, stable across model variants.

    Keyed on the parameter name so that models sharing a sub-block
    initialize that sub-block identically for the same seed.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def check_params_have_grads(params: Sequence[Parameter]) -> None:
    missing = [p.name for p in params if p.tensor.grad is None]
    if missing:
        raise UsageError(f"sgd_step before backward: no gradient on {missing[:3]}")
