"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape every op is a plain
numpy evaluation, which is how inference runs.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape():
    ...     loss = (w @ w).sum()
    ...     backward(loss)
    >>> w.grad.tolist()
    [[4.0, 4.0], [4.0, 4.0]]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOG_CLAMP = 1e-12

_active_tapes: list["Tape"] = []
_debug = False


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """An op received an invalid non-tensor argument."""


class ContractError(RuntimeError):
    """An engine precondition was violated."""


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/Inf while enabled."""
    global _debug
    _debug = bool(enabled)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of the ops evaluated while this tape is active."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def record(self, node: Node) -> None:
        node.output._tape = self
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss is not attached to an active tape")
    loss._tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    out.name = None
    tape = _active_tapes[-1] if _active_tapes else None
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(Node(op, inputs, out, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, "add", (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, "sub", (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, "mul", (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _result(out, "div", (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _result(out, "sqrt", (x,), lambda g: (g / (2.0 * out),))


def matmul(a, b) -> Tensor:
    """Matrix product of ``(m, k)`` and ``(k, n)`` operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return _result(a.data @ b.data, "matmul", (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


# --- pointwise nonlinearities ------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


_ELEMENTWISE = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, x: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {op!r}") from None
    return fn(as_tensor(x))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, "softmax", (x,), bwd)


# --- reductions and shape ---------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), "sum", (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _result(np.transpose(x.data, axes), "transpose", (x,),
                   lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, index) -> Tensor:
    x = as_tensor(x)

    def bwd(g):
        full = np.zeros_like(x.data)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(np.array(x.data[index]), "getitem", (x,), bwd)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ParameterError(f"concat axis {axis} out of range for {ndim}-d tensors")
    ax = axis % ndim
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(out, "concat", tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _result(out, "stack", tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# --- non-differentiable helpers ---------------------------------------------

def one_hot(ids, n: int) -> Tensor:
    """One-hot encode an int or int array over ``n`` classes (constant tensor)."""
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= n):
        raise ParameterError(f"class id out of range for n={n}")
    return Tensor(np.eye(n)[ids])


def argmax(x) -> np.ndarray | int:
    """Last-axis argmax; ties resolve to the lowest index."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    out = np.argmax(data, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


# --- convolution ------------------------------------------------------------

def dilated_causal_conv1d(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Causal 1-D convolution, ``x`` is ``(C_in, T)`` or ``(B, C_in, T)``.

    The input is left-padded with ``(K - 1) * dilation`` zeros, so the output
    at frame ``t`` reads only frames ``t, t - d, ..., t - (K - 1) d``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if not isinstance(dilation, (int, np.integer)) or dilation <= 0:
        raise ParameterError(f"dilation must be a positive int, got {dilation!r}")
    if w.ndim != 3 or w.shape[2] < 1:
        raise DimensionError(f"kernel must be (C_out, C_in, K), got {w.shape}")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise DimensionError(f"input {x.shape} does not match kernel {w.shape}")
    c_out, _, k = w.shape
    T = xd.shape[2]
    pad = (k - 1) * dilation
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, 0)))
    out = np.zeros((xd.shape[0], c_out, T))
    for j in range(k):
        out += np.einsum("oc,bct->bot", w.data[:, :, j], xp[:, :, j * dilation: j * dilation + T])

    def bwd(g):
        g3 = g[None] if unbatched else g
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            sl = slice(j * dilation, j * dilation + T)
            gw[:, :, j] = np.einsum("bot,bct->oc", g3, xp[:, :, sl])
            gxp[:, :, sl] += np.einsum("oc,bot->bct", w.data[:, :, j], g3)
        gx = gxp[:, :, pad:]
        return (gx[0] if unbatched else gx, gw)

    return _result(out[0] if unbatched else out, "conv1d", (x, w), bwd)


# --- losses -----------------------------------------------------------------

def cross_entropy(pred_probs: Tensor, target) -> Tensor:
    """Mean negative log-likelihood of integer targets under ``pred_probs``.

    ``pred_probs`` has shape ``(..., n)`` and ``target`` the leading shape.
    Probabilities are clamped at ``LOG_CLAMP`` before the log.
    """
    p = as_tensor(pred_probs)
    target = np.asarray(target, dtype=np.int64)
    n = p.shape[-1]
    if target.shape != p.shape[:-1]:
        raise DimensionError(f"targets {target.shape} do not match predictions {p.shape}")
    if np.any(target < 0) or np.any(target >= n):
        raise ParameterError(f"target id out of range for n={n}")
    flat = p.data.reshape(-1, n)
    idx = target.reshape(-1)
    picked = flat[np.arange(idx.size), idx]
    clamped = np.maximum(picked, LOG_CLAMP)
    loss = -np.mean(np.log(clamped))

    def bwd(g):
        gp = np.zeros_like(flat)
        live = picked > LOG_CLAMP
        gp[np.arange(idx.size), idx] = np.where(live, -1.0 / (clamped * idx.size), 0.0)
        return (g * gp.reshape(p.shape),)

    return _result(np.asarray(loss), "cross_entropy", (p,), bwd)


def l2_pose_loss(pred: Tensor, target) -> Tensor:
    """Mean per-joint Euclidean distance (not squared).

    Trailing axis is ``3 * J`` (flattened joints) or the pair ``(J, 3)``.
    """
    p, q = as_tensor(pred), as_tensor(target)
    if p.shape != q.shape:
        raise DimensionError(f"pose shapes {p.shape} and {q.shape} differ")
    if p.shape[-1] != 3:
        if p.shape[-1] % 3:
            raise DimensionError(f"pose feature size {p.shape[-1]} is not a multiple of 3")
        diff = (p.data - q.data).reshape(p.shape[:-1] + (-1, 3))
    else:
        diff = p.data - q.data
    norms = np.sqrt((diff * diff).sum(axis=-1))
    count = norms.size
    loss = norms.mean()

    def bwd(g):
        safe = np.where(norms > 0, norms, 1.0)
        gd = np.where(norms[..., None] > 0, diff / safe[..., None], 0.0) * (g / count)
        gd = gd.reshape(p.shape)
        return (gd, -gd)

    return _result(np.asarray(loss), "l2_pose_loss", (p, q), bwd)
