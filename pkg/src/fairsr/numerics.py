"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`CompGraph` is a tape. Every op evaluates eagerly when it is added
(so shape problems surface at construction, naming the node), and the tape
can be replayed with new leaf values via :meth:`CompGraph.forward`. That
replay is what the finite-difference checks lean on.

Arrays are usually 2-D; a leading batch axis is allowed where the model
needs one (batched matmul, unfolded windows).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "attrs", "value", "name", "requires_grad")

    def __init__(self, graph, id, op, inputs, attrs, value, name, requires_grad):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<node #{self.id} {self.op}{label} shape={self.value.shape}>"

    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __rmul__(self, other):
        return self.graph.mul(other, self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __neg__(self):
        return self.graph.scale(self, -1.0)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x, axis):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


# --- op table: name -> (forward(values, attrs), backward(grad, values, out, attrs))

def _fwd_matmul(v, a):
    return np.matmul(v[0], v[1])


def _bwd_matmul(g, v, out, a):
    x, y = v
    gx = np.matmul(g, np.swapaxes(y, -1, -2))
    gy = np.matmul(np.swapaxes(x, -1, -2), g)
    return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)


def _bwd_add(g, v, out, a):
    return _unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)


def _bwd_sub(g, v, out, a):
    return _unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)


def _bwd_mul(g, v, out, a):
    return _unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)


def _fwd_max(v, a):
    return v[0].max(axis=a["axis"])


def _bwd_max(g, v, out, a):
    axis = a["axis"]
    idx = np.expand_dims(np.argmax(v[0], axis=axis), axis)  # first maximal index
    grad = np.zeros_like(v[0])
    np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
    return (grad,)


def _bwd_softmax(g, v, out, a):
    axis = a["axis"]
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _bwd_concat(g, v, out, a):
    axis = a["axis"]
    cuts = np.cumsum([x.shape[axis] for x in v])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _bwd_slice(g, v, out, a):
    grad = np.zeros_like(v[0])
    grad[a["index"]] = g
    return (grad,)


def _fwd_outer(v, a):
    return v[0][..., :, None] * v[1][..., None, :]


def _bwd_outer(g, v, out, a):
    return (g * v[1][..., None, :]).sum(axis=-1), (g * v[0][..., :, None]).sum(axis=-2)


def _fwd_sum(v, a):
    return np.asarray(v[0].sum(axis=a["axis"], keepdims=a["keepdims"]))


def _bwd_sum(g, v, out, a):
    axis = a["axis"]
    if axis is not None and not a["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, v[0].shape).copy(),)


def _bwd_gather(g, v, out, a):
    grad = np.zeros_like(v[0])
    np.add.at(grad, a["indices"], g)
    return (grad,)


def _bwd_transpose(g, v, out, a):
    return (np.transpose(g, np.argsort(a["axes"])),)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_fwd_matmul, _bwd_matmul),
    "add": (lambda v, a: v[0] + v[1], _bwd_add),
    "sub": (lambda v, a: v[0] - v[1], _bwd_sub),
    "mul": (lambda v, a: v[0] * v[1], _bwd_mul),
    "scale": (lambda v, a: v[0] * a["c"], lambda g, v, o, a: (g * a["c"],)),
    "sigmoid": (lambda v, a: _sigmoid(v[0]), lambda g, v, o, a: (g * o * (1.0 - o),)),
    "log_sigmoid": (
        lambda v, a: -np.logaddexp(0.0, -v[0]),
        lambda g, v, o, a: (g * (1.0 - _sigmoid(v[0])),),
    ),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "softmax": (lambda v, a: _softmax(v[0], a["axis"]), _bwd_softmax),
    "max": (_fwd_max, _bwd_max),
    "concat": (lambda v, a: np.concatenate(v, axis=a["axis"]), _bwd_concat),
    "slice": (lambda v, a: v[0][a["index"]].copy(), _bwd_slice),
    "outer": (_fwd_outer, _bwd_outer),
    "sum": (_fwd_sum, _bwd_sum),
    "square_sum": (lambda v, a: np.asarray((v[0] * v[0]).sum()), lambda g, v, o, a: (2.0 * g * v[0],)),
    "reshape": (lambda v, a: v[0].reshape(a["shape"]), lambda g, v, o, a: (g.reshape(v[0].shape),)),
    "transpose": (lambda v, a: np.ascontiguousarray(np.transpose(v[0], a["axes"])), _bwd_transpose),
    "gather": (lambda v, a: v[0][a["indices"]], _bwd_gather),
    "unfold": (
        lambda v, a: kernels.unfold_windows(np.ascontiguousarray(v[0]), a["width"]),
        lambda g, v, o, a: (kernels.unfold_windows_backward(np.ascontiguousarray(g), v[0].shape[-1]),),
    ),
    "segment_softmax": (
        lambda v, a: kernels.segment_softmax(np.ascontiguousarray(v[0]), a["offsets"]),
        lambda g, v, o, a: (kernels.segment_softmax_backward(np.ascontiguousarray(g), o, a["offsets"]),),
    ),
    "segment_sum": (
        lambda v, a: kernels.segment_sum(np.ascontiguousarray(v[0]), a["offsets"]),
        lambda g, v, o, a: (kernels.segment_sum_backward(np.ascontiguousarray(g), a["offsets"]),),
    ),
}

OP_NAMES = tuple(_OPS)
_LEAVES = ("param", "input", "const")


class CompGraph:
    """Tape of op records over named leaf tensors.

    ``dtype`` is float64 by default; pass ``np.float32`` for training runs
    that trade precision for speed.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.inputs: dict[str, Node] = {}
        self.outputs: dict[str, Node] = {}

    # -- leaves

    def _leaf(self, kind, name, value):
        value = np.asarray(value)
        if value.dtype != self.dtype:
            value = value.astype(self.dtype)
        node = Node(self, len(self.nodes), kind, (), {}, value, name, kind == "param")
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        """Register a trainable leaf. The array is used without copying."""
        if name in self.params:
            return self.params[name]
        node = self._leaf("param", name, value)
        self.params[name] = node
        return node

    def input(self, name: str, value) -> Node:
        if name in self.inputs:
            raise ValueError(f"duplicate input {name!r}")
        node = self._leaf("input", name, value)
        self.inputs[name] = node
        return node

    def constant(self, value) -> Node:
        return self._leaf("const", None, value)

    def output(self, name: str, node: Node) -> Node:
        self.outputs[name] = node
        return node

    def _as_node(self, x):
        if isinstance(x, Node):
            if x.graph is not self:
                raise ValueError(f"{x!r} belongs to a different graph")
            return x
        return self.constant(x)

    def _apply(self, op, inputs, **attrs):
        inputs = tuple(self._as_node(x) for x in inputs)
        fwd, _ = _OPS[op]
        node_id = len(self.nodes)
        try:
            self._check(op, [x.value for x in inputs], attrs)
            value = fwd([x.value for x in inputs], attrs)
        except (ValueError, IndexError) as exc:
            shapes = ", ".join(str(x.shape) for x in inputs)
            raise ShapeError(f"node #{node_id} ({op}) rejects input shapes [{shapes}]: {exc}") from exc
        node = Node(
            self, node_id, op, tuple(x.id for x in inputs), attrs, np.asarray(value),
            None, any(x.requires_grad for x in inputs),
        )
        self.nodes.append(node)
        return node

    @staticmethod
    def _check(op, vals, attrs):
        if op in ("add", "sub", "mul"):
            np.broadcast_shapes(vals[0].shape, vals[1].shape)
        elif op == "matmul":
            x, y = vals
            if x.ndim < 2 or y.ndim < 2:
                raise ValueError("matmul needs operands of rank >= 2")
            if x.shape[-1] != y.shape[-2]:
                raise ValueError(f"inner dimensions differ ({x.shape[-1]} vs {y.shape[-2]})")
        elif op == "outer":
            if vals[0].shape[:-1] != vals[1].shape[:-1]:
                raise ValueError("outer needs matching leading axes")
        elif op == "unfold":
            if vals[0].ndim != 3:
                raise ValueError("unfold expects (batch, features, time)")
            if not 1 <= attrs["width"] <= vals[0].shape[-1]:
                raise ValueError(f"window width {attrs['width']} exceeds length {vals[0].shape[-1]}")
        elif op in ("segment_softmax", "segment_sum"):
            offsets = attrs["offsets"]
            if offsets[-1] != vals[0].shape[0]:
                raise ValueError("segment offsets do not cover the input")

    # -- ops

    def matmul(self, a, b):
        return self._apply("matmul", (a, b))

    def add(self, a, b):
        return self._apply("add", (a, b))

    def sub(self, a, b):
        return self._apply("sub", (a, b))

    def mul(self, a, b):
        """Elementwise product with numpy broadcasting."""
        return self._apply("mul", (a, b))

    def scale(self, a, c: float):
        return self._apply("scale", (a,), c=float(c))

    def sigmoid(self, a):
        return self._apply("sigmoid", (a,))

    def log_sigmoid(self, a):
        return self._apply("log_sigmoid", (a,))

    def tanh(self, a):
        return self._apply("tanh", (a,))

    def softmax(self, a, axis=-1):
        return self._apply("softmax", (a,), axis=axis)

    def max(self, a, axis=-1):
        """Max over one axis; the gradient goes to the first maximal entry."""
        return self._apply("max", (a,), axis=axis)

    def concat(self, parts, axis=-1):
        return self._apply("concat", tuple(parts), axis=axis)

    def slice(self, a, index):
        return self._apply("slice", (a,), index=index)

    def outer(self, a, b):
        return self._apply("outer", (a, b))

    def sum(self, a, axis=None, keepdims=False):
        return self._apply("sum", (a,), axis=axis, keepdims=keepdims)

    def square_sum(self, a):
        return self._apply("square_sum", (a,))

    def reshape(self, a, shape):
        return self._apply("reshape", (a,), shape=tuple(shape))

    def transpose(self, a, axes=None):
        a = self._as_node(a)
        if axes is None:
            axes = tuple(reversed(range(a.value.ndim)))
        return self._apply("transpose", (a,), axes=tuple(axes))

    def gather(self, table, indices):
        """Rows of ``table`` selected by an integer array (any shape)."""
        return self._apply("gather", (table,), indices=np.asarray(indices, dtype=np.int64))

    def unfold(self, a, width: int):
        return self._apply("unfold", (a,), width=int(width))

    def segment_softmax(self, a, offsets):
        return self._apply("segment_softmax", (a,), offsets=np.asarray(offsets, dtype=np.int64))

    def segment_sum(self, a, offsets):
        return self._apply("segment_sum", (a,), offsets=np.asarray(offsets, dtype=np.int64))

    # -- evaluation

    def forward(self, values: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Replay the tape, overriding any named param/input leaves.

        Returns the registered outputs by name.
        """
        values = dict(values or {})
        for node in self.nodes:
            if node.op in _LEAVES:
                if node.name is not None and node.name in values:
                    new = np.asarray(values.pop(node.name), dtype=self.dtype)
                    if new.shape != node.value.shape:
                        raise ShapeError(
                            f"node #{node.id} ({node.op} {node.name!r}) expects shape "
                            f"{node.value.shape}, got {new.shape}"
                        )
                    node.value = new
                continue
            fwd, _ = _OPS[node.op]
            node.value = np.asarray(fwd([self.nodes[i].value for i in node.inputs], node.attrs))
        if values:
            raise KeyError(f"unknown leaves: {sorted(values)}")
        return {name: node.value for name, node in self.outputs.items()}

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradient of a scalar node with respect to every param leaf."""
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.pop(node.id, None)
            if g is None or node.op in _LEAVES:
                if node.op == "param" and g is not None:
                    grads[node.id] = g
                continue
            _, bwd = _OPS[node.op]
            parents = [self.nodes[i] for i in node.inputs]
            in_grads = bwd(g, [p.value for p in parents], node.value, node.attrs)
            for parent, pg in zip(parents, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        out = {}
        for name, node in self.params.items():
            g = grads.get(node.id)
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=self.dtype)
        return out


class ParamView(dict):
    """Registers named arrays as params of ``graph`` on first lookup."""

    def __init__(self, graph: CompGraph, arrays: Mapping[str, np.ndarray]):
        super().__init__()
        self.graph = graph
        self.arrays = arrays

    def __missing__(self, name):
        node = self.graph.param(name, self.arrays[name])
        self[name] = node
        return node

    def bind_all(self):
        for name in self.arrays:
            self[name]
        return self


def forward(graph: CompGraph, inputs: Mapping[str, np.ndarray] | None = None):
    return graph.forward(inputs)


def backward(graph: CompGraph, loss: Node):
    return graph.backward(loss)


# --- optimisation

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_adam(params: Mapping[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params, grads, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update. Arrays in ``params`` and ``state`` change in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
