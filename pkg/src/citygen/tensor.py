"""Dense float64 tensors with reverse-mode differentiation.

Define-by-run: every operation on tensors that require gradients records its
parents and a backward closure on the output node.  ``backward(loss)`` traces
the DAG from the loss into a topologically ordered :class:`Graph` and walks it
once in reverse.  The graph is rebuilt on every forward pass; nothing is
retained between steps except the tensors the caller holds.

Conventions
-----------
* all data is float64, C-contiguous;
* every op output is checked for NaN/Inf and raises ``FloatingPointError``
  so numerical blowups surface at the op that produced them;
* ``backward`` accumulates into ``.grad`` — repeated calls without
  ``zero_grad`` sum their contributions;
* batched ``matmul`` requires both operands to share identical leading
  dimensions (or both be 2-D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (eval/sampling paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = _check_finite(arr, "leaf")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, bwd, op):
        out = cls.__new__(cls)
        out.data = _check_finite(np.asarray(data, dtype=np.float64), op)
        out.grad = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._bwd = bwd
            out._op = op
        else:
            out._parents = ()
            out._bwd = None
            out._op = op
        return out

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max_detached(self, axis=None, keepdims=False) -> "Tensor":
        """Max along an axis as a constant (no gradient flows through it)."""
        return Tensor(self.data.max(axis=axis, keepdims=keepdims))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Graph: topologically ordered op records, rebuilt from the loss on demand.
# ---------------------------------------------------------------------------


@dataclass
class OpRecord:
    op: str
    inputs: tuple
    output: "Tensor"
    bwd: object


class Graph:
    """Topological op-record list for one backward traversal."""

    def __init__(self, records: list[OpRecord], nodes: list[Tensor]):
        self.records = records
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        """Postorder DFS from ``root``; each record appears exactly once."""
        records: list[OpRecord] = []
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                if node._bwd is not None:
                    records.append(OpRecord(node._op, node._parents, node, node._bwd))
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(records, nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dt into ``.grad`` of every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.trace(loss)
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(graph.records):
        g = flows.pop(id(rec.output), None)
        if g is None:
            continue
        for parent, contrib in zip(rec.inputs, rec.bwd(g)):
            if contrib is None:
                continue
            acc = flows.get(id(parent))
            flows[id(parent)] = contrib if acc is None else acc + contrib
        if rec.output.requires_grad:
            _accumulate(rec.output, g)
    # leaves collect whatever flowed all the way down
    for node in graph.nodes:
        if node.requires_grad and node._bwd is None:
            g = flows.get(id(node))
            if g is not None:
                _accumulate(node, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # aliasing g is safe: backward never mutates flow arrays in place
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return Tensor._from_op(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return Tensor._from_op(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(a.data * b.data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor._from_op(a.data / b.data, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), bwd, "neg")


def pow_const(a: Tensor, p) -> Tensor:
    p = float(p)
    if p == 2.0:  # hot path in losses and layer norm

        def bwd2(g):
            return (g * (2.0 * a.data),)

        return Tensor._from_op(a.data * a.data, (a,), bwd2, "pow")

    def bwd(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return Tensor._from_op(np.power(a.data, p), (a,), bwd, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return Tensor._from_op(out_data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return Tensor._from_op(out_data, (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out_data,)

    return Tensor._from_op(out_data, (a,), bwd, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor._from_op(out_data, (a,), bwd, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor._from_op(out_data, (a,), bwd, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return Tensor._from_op(out_data, (a,), bwd, "softplus")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul leading dims differ: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bwd(g):
        return (g @ _swap_last(b.data), _swap_last(a.data) @ g)

    return Tensor._from_op(a.data @ b.data, (a, b), bwd, "matmul")


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def bwd(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return Tensor._from_op(a.data.transpose(axes), (a,), bwd, "transpose")


def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy() if g.ndim == 0 else np.broadcast_to(g.reshape(()), shape).copy()
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bwd(g):
        return (_restore_axes(g, a.shape, axis, keepdims),)

    return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def bwd(g):
        return (_restore_axes(g, a.shape, axis, keepdims) / count,)

    return Tensor._from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# composite ops (gradients come from the primitives)
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtracted before exponentiation)."""
    axis = axis % x.ndim if x.ndim else 0
    if not (0 <= axis < max(x.ndim, 1)):
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = sub(x, x.max_detached(axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1 (eps-stabilized), then affine."""
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise ValueError(f"layer_norm feature dims differ: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = reduce_mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_const(add(var, Tensor(eps)), -0.5)
    return add(mul(mul(xc, inv), gain), bias)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (single fused primitive for speed)."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v * v * v)
    th = np.tanh(inner)
    out_data = 0.5 * v * (1.0 + th)

    def bwd(g):
        sech2 = 1.0 - th * th
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * sech2 * d_inner),)

    return Tensor._from_op(out_data, (x,), bwd, "gelu")


def bce_with_logits(logits: Tensor, targets: Tensor, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy from logits; positives upweighted by ``pos_weight``."""
    pos = mul(targets, softplus(neg(logits)))
    negt = mul(sub(Tensor(1.0), targets), softplus(logits))
    return reduce_mean(add(mul(Tensor(float(pos_weight)), pos), negt))
