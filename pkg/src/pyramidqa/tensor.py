"""Dense tensors and a linear-tape reverse-mode autodiff engine.

A :class:`Tensor` wraps a row-major numpy array of float32 or float64
scalars.  Operations (see :mod:`pyramidqa.ops`) record one :class:`Node`
per call on the currently active :class:`Tape`.  Because nodes are
appended in execution order, the tape's insertion order is already a
topological order of the graph, and :func:`backward` is a single reverse
sweep that accumulates gradients additively at fan-out points.

Recording is scoped: ``with record(tape): ...`` activates a tape, and
``with no_tape(): ...`` suspends recording (used for evaluation and for
the finite-difference probes of the gradient checker).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A numpy-backed value that can participate in gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, label: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {label}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class Node:
    """One recorded operation: inputs, output, and a gradient rule.

    ``backward`` maps the gradient at the output to a tuple of gradients
    aligned with ``inputs`` (entries may be None for non-differentiable
    or constant inputs).
    """

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Tape:
    """Append-only record of operations; insertion order is topological."""

    def __init__(self):
        self.nodes: list[Node] = []

    def append(self, node: Node) -> None:
        node.output.node_id = len(self.nodes)
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def check_topological(self) -> bool:
        """True when every node's tensor inputs were produced earlier.

        Leaf tensors (no node_id) trivially precede everything.
        """
        for pos, node in enumerate(self.nodes):
            for inp in node.inputs:
                if isinstance(inp, Tensor) and inp.node_id is not None:
                    if inp.node_id >= pos and inp is not node.output:
                        return False
        return True


# Stack of recording scopes; ``None`` entries suspend recording.
_SCOPES: list[Optional[Tape]] = []


def active_tape() -> Optional[Tape]:
    return _SCOPES[-1] if _SCOPES else None


@contextlib.contextmanager
def record(tape: Tape):
    """Activate ``tape`` for operations executed inside the block."""
    _SCOPES.append(tape)
    try:
        yield tape
    finally:
        _SCOPES.pop()


@contextlib.contextmanager
def no_tape():
    """Suspend recording; operations inside compute values only."""
    _SCOPES.append(None)
    try:
        yield
    finally:
        _SCOPES.pop()


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse sweep over ``tape`` seeding ``loss`` with gradient one.

    Gradients are accumulated additively into ``Tensor.grad``; tensors
    used several times therefore receive the sum of their contributions.
    """
    if loss.shape != ():
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(tape.nodes):
        gout = node.output.grad
        if gout is None:
            continue
        grads = node.backward(gout)
        for inp, g in zip(node.inputs, grads):
            if g is None or not isinstance(inp, Tensor):
                continue
            if not (inp.requires_grad or inp.node_id is not None):
                continue
            inp.grad = g if inp.grad is None else inp.grad + g
