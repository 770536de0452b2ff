"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy and, when any input
requires a gradient, appends a node to the active :class:`Tape`.  ``backward``
walks the tape once in reverse order.  A tape cannot be replayed twice.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, NonFiniteError, UsageError

DTYPE = np.float64

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = [Tape()]
    return stack


def current_tape() -> "Tape":
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class _FlopCounter:
    def __init__(self):
        self.macs = 0


@contextlib.contextmanager
def count_flops():
    """Count multiply-accumulate operations performed by ``matmul``.

    >>> with count_flops() as fc:
    ...     _ = matmul(tensor(np.ones((2, 3))), tensor(np.ones((3, 4))))
    >>> fc.macs
    24
    """
    counters = getattr(_state, "flop_counters", None)
    if counters is None:
        counters = _state.flop_counters = []
    fc = _FlopCounter()
    counters.append(fc)
    try:
        yield fc
    finally:
        counters.remove(fc)


def _add_macs(n: int) -> None:
    for fc in getattr(_state, "flop_counters", ()) or ():
        fc.macs += int(n)


class Node:
    __slots__ = ("op", "out", "parents", "backward", "tape", "index")

    def __init__(self, op, out, parents, backward, tape, index):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward = backward
        self.tape = tape
        self.index = index


class Tape:
    """Ordered record of executed primitives.

    Used as a context manager, a tape becomes the recording target for the
    enclosed block::

        with Tape() as tape:
            loss = model(x)
        backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.ops: list[str] = []
        self.consumed = False

    def record(self, op, out, parents, backward) -> Node:
        if self.consumed:
            raise UsageError("cannot record on a tape that was already replayed")
        node = Node(op, out, parents, backward, self, len(self.nodes))
        self.nodes.append(node)
        self.ops.append(op)
        return node

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.remove(self)
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim and 0 in arr.shape:
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self):
        return self.shape[0]

    # operators
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=DTYPE)
    # NaN and Inf both survive a sum, so one reduction checks the whole array
    if not math.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out._node = None
    if needs:
        out._node = current_tape().record(op, out, tuple(parents), backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant floor."""
    a = as_tensor(a)
    mask = a.data >= floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw, "gelu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# ----------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    _add_macs(out.size * ad.shape[-1])

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(out, (a,), bw, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def layer_norm(a, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an optional affine map."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [a]
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        parents.append(w)
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
    out = xhat * w.data if w is not None else xhat
    if b is not None:
        out = out + b.data
    d = x.shape[-1]

    def bw(g):
        grads = []
        gx = g * w.data if w is not None else g
        if a.requires_grad:
            gx_sum = gx.sum(axis=-1, keepdims=True)
            gxx = (gx * xhat).sum(axis=-1, keepdims=True)
            grads.append(inv / d * (d * gx - gx_sum - xhat * gxx))
        else:
            grads.append(None)
        if w is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0) if w.requires_grad else None)
        if b is not None:
            grads.append(g.reshape(-1, d).sum(axis=0) if b.requires_grad else None)
        return tuple(grads)

    return _make(out, parents, bw, "layer_norm")


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def _has_array_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data[idx]
    fancy = _has_array_index(idx)

    def bw(g):
        gx = np.zeros(shape, dtype=DTYPE)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] = g
        return (gx,)

    return _make(np.array(out, dtype=DTYPE), (a,), bw, "getitem")


def take(a, indices, axis: int) -> Tensor:
    """Gather entries along ``axis``; indices may repeat."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    shape = a.shape
    if indices.size and (indices.min() < 0 or indices.max() >= shape[axis]):
        raise DimensionError("take: index out of range")
    out = np.take(a.data, indices, axis=axis)

    def bw(g):
        gm = np.moveaxis(g, axis, 0)
        acc = np.zeros((shape[axis],) + gm.shape[1:], dtype=DTYPE)
        np.add.at(acc, indices, gm)
        return (np.moveaxis(acc, 0, axis),)

    return _make(out, (a,), bw, "take")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, ts, bw, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concat(expanded, axis=axis)


# ----------------------------------------------------------------------------
# sequence ops


def _replicate_pad_index(n: int, half: int) -> np.ndarray:
    return np.clip(np.arange(-half, n + half), 0, n - 1)


def moving_average(x, k: int, axis: int = -2) -> Tensor:
    """Centered moving average with edge-replicate padding.

    The window for position ``t`` is ``[t - k//2, t + k//2]``; indices outside
    the sequence take the nearest edge value, so the output length equals the
    input length.  For a ``[n, d]`` input the default axis is time.
    """
    x = as_tensor(x)
    if not isinstance(k, (int, np.integer)) or k <= 0 or k % 2 == 0:
        raise ConfigError(f"moving-average window must be a positive odd integer, got {k!r}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if k > 2 * n - 1:
        raise ConfigError(f"window {k} too large for sequence length {n}")
    half = k // 2
    if k == 1:
        return _make(x.data.copy(), (x,), lambda g: (g,), "moving_average")
    xm = np.moveaxis(x.data, axis, 0)
    padded = xm[_replicate_pad_index(n, half)]
    csum = np.concatenate([np.zeros((1,) + xm.shape[1:]), np.cumsum(padded, axis=0)], axis=0)
    out = (csum[k:] - csum[:-k]) / k

    def bw(g):
        gm = np.moveaxis(g, axis, 0)
        # adjoint: each padded position receives the window-sum of g over outputs covering it
        gz = np.concatenate([np.zeros((k,) + gm.shape[1:]), gm, np.zeros((k,) + gm.shape[1:])], axis=0)
        cs = np.concatenate([np.zeros((1,) + gm.shape[1:]), np.cumsum(gz, axis=0)], axis=0)
        # padded position s is covered by outputs t in [s-k+1, s]
        s = np.arange(n + 2 * half)
        gpad = (cs[s + k + 1] - cs[s + 1]) / k
        gx = np.zeros_like(xm)
        np.add.at(gx, _replicate_pad_index(n, half), gpad)
        return (np.moveaxis(gx, 0, axis),)

    return _make(np.moveaxis(out, 0, axis), (x,), bw, "moving_average")


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ----------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward needs a scalar loss tensor")
    node = loss._node
    if node is None:
        raise UsageError("loss is not connected to any tensor that requires grad")
    tape = node.tape
    if tape.consumed:
        raise UsageError("this tape was already replayed; run a new forward pass")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for nd in reversed(tape.nodes[: node.index + 1]):
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        pgrads = nd.backward(g)
        for p, pg in zip(nd.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p._node is None or p._node.tape is not tape:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    # drop graph references so activations are freed without the cycle collector
    for nd in tape.nodes:
        nd.parents = ()
        nd.backward = None
        nd.out = None
    tape.nodes = []
    stack = _tape_stack()
    if stack and stack[0] is tape:
        stack[0] = Tape()
