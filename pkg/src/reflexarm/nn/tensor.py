"""Reverse-mode autodiff core: Tensor graph, Tape recording, backward pass.

Gradient recording is off by default (fast inference); wrap a forward pass in
a ``Tape`` to record the op graph and obtain parameter gradients. Values are
float32 by default; ops preserve the dtype of their inputs so gradient-check
code can run the whole graph in float64.
"""
from __future__ import annotations

import numpy as np

_GRAD_ENABLED = False


class GraphError(RuntimeError):
    """Contract violation in graph construction or backward traversal."""


class Tensor:
    """N-d value node. Row-major float buffer plus optional graph edges."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, np.generic):
            data = np.asarray(data)          # numpy scalar: keep its dtype
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self):
        return self.requires_grad or self._backward is not None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, tracked={self.tracked})"


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)


def grad_enabled():
    return _GRAD_ENABLED


class no_grad:
    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def make_node(data, parents, backward):
    """Create an op output; records graph edges only while a Tape is active."""
    if _GRAD_ENABLED and any(p.tracked for p in parents):
        return Tensor(data, _parents=parents, _backward=backward)
    return Tensor(data)


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None or p.requires_grad:
                stack.append((p, False))
    return order  # parents before children


def accumulate_grad(tensor, grad):
    if tensor.grad is None:
        # copy: upstream buffers may be views or get reused by other branches
        tensor.grad = np.array(grad, copy=True)
    else:
        tensor.grad += grad


class Tape:
    """Records one forward pass over registered parameters.

    Usage::

        tape = Tape(model.parameters())
        with tape:
            loss = model.loss(batch)
        grads = tape.gradients(loss)   # aligned with the parameter list
    """

    def __init__(self, params):
        self.params = list(params)
        self._recorded = False
        self._prev = None

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = True
        self._recorded = True
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False

    def gradients(self, loss):
        """Run the backward pass from a scalar loss; returns one grad per parameter.

        Parameters that did not participate in the forward get zero gradients.
        Internal node grads are freed afterwards; parameter grads are returned
        fresh each call (no accumulation across calls).
        """
        if not self._recorded:
            raise GraphError("Tape.gradients called before any forward pass was recorded")
        if loss._backward is None and not loss.requires_grad:
            raise GraphError("loss is not connected to any recorded graph")
        if loss.data.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.data.shape}")

        order = _toposort(loss)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        grads = []
        for p in self.params:
            if p.grad is None:
                grads.append(np.zeros_like(p.data))
            else:
                grads.append(p.grad)
        # wipe graph-held grads so the next step starts clean
        for node in order:
            node.grad = None
        return grads


def backward(tape, loss):
    """Functional alias for ``tape.gradients(loss)``."""
    return tape.gradients(loss)
