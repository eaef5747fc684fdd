"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tape` records every differentiable operation run while it is
active (define-by-run); :func:`backward` walks the tape in strict reverse
append order and accumulates gradients additively into the ``grad`` field
of every ``requires_grad`` tensor. Tapes are rebuilt per forward pass.

Every primitive validates its output for NaN/Inf and raises
:class:`~varicast.errors.NumericError` on the spot, which keeps blowups
attributable to a single op instead of surfacing later as a poisoned loss.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, NumericError, ShapeError

_LN_EPS = 1e-5

_TAPES: list["Tape"] = []


class Tensor:
    """A dense float64 array plus autodiff bookkeeping.

    ``data`` is immutable by convention after construction; only ``grad``
    is mutated (by backward passes and ``zero_grad``).
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not math.isfinite(arr.sum()):
            raise NumericError("tensor created from non-finite data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic operators -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    # reductions / shape ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


class _Node:
    __slots__ = ("op", "out", "parents", "fn")

    def __init__(self, op: str, out: Tensor, parents: tuple[Tensor, ...], fn: Callable):
        self.op = op
        self.out = out
        self.parents = parents
        self.fn = fn


class Tape:
    """Append-only record of one forward pass; backward walks it in reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from loss."""
        if self._spent:
            raise ContractError("backward already ran on this tape; rebuild the tape")
        if loss.data.size != 1:
            raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
        if loss.node_id is None and loss.requires_grad:
            # a lone requires_grad leaf: d loss / d loss = 1, nothing else to do
            pass
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(
                        f"backward of {node.op}: grad shape {pg.shape} != {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = pg.copy()
                else:
                    parent.grad = parent.grad + pg


def backward(loss: Tensor) -> None:
    """Run the active tape's backward pass from a scalar loss."""
    if not _TAPES:
        raise ContractError("backward() requires an active tape")
    _TAPES[-1].backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    # single-pass finiteness check: any NaN/Inf poisons the sum
    if not math.isfinite(data.sum()):
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    rg = False
    for p in parents:
        if p.requires_grad:
            rg = True
            break
    out.requires_grad = rg
    out.grad = None
    out.node_id = None
    if _TAPES and rg:
        tape = _TAPES[-1]
        out.node_id = len(tape.nodes)
        tape.nodes.append(_Node(op, out, parents, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting, gradients un-broadcast)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result("add", data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result("sub", data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result("mul", data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def fn(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _result("div", data, (a, b), fn)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        return (-g,)

    return _result("neg", -a.data, (a,), fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _result("matmul", data, (a, b), fn)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def fn(g):
        return (g * y,)

    return _result("exp", y, (x,), fn)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("log of a negative value")
    with np.errstate(divide="ignore"):
        y = np.log(x.data)

    def fn(g):
        return (g / x.data,)

    return _result("log", y, (x,), fn)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of a negative value")
    y = np.sqrt(x.data)

    def fn(g):
        return (g * 0.5 / y,)

    return _result("sqrt", y, (x,), fn)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def fn(g):
        return (g * (1.0 - y * y),)

    return _result("tanh", y, (x,), fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is overflow-safe for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def fn(g):
        return (g * y * (1.0 - y),)

    return _result("sigmoid", y, (x,), fn)


def softplus(x) -> Tensor:
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)

    def fn(g):
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x.data)),)

    return _result("softplus", y, (x,), fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0)

    def fn(g):
        return (g * (x.data > 0.0),)

    return _result("relu", y, (x,), fn)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    y = np.power(x.data, p)

    def fn(g):
        return (g * p * np.power(x.data, p - 1.0),)

    return _result("power", y, (x,), fn)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through only on the interior."""
    x = as_tensor(x)
    y = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def fn(g):
        return (g * inside,)

    return _result("clamp", y, (x,), fn)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Elementwise select with a constant boolean mask (not differentiated)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def fn(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.data.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.data.shape),
        )

    return _result("where", data, (a, b), fn)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _result("sum", np.asarray(data), (x,), fn)


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        denom = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        denom = 1
        for ax in axes:
            denom *= x.data.shape[ax]

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / denom, x.data.shape).copy(),)

    return _result("mean", np.asarray(data), (x,), fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def fn(g):
        return (g.reshape(x.data.shape),)

    return _result("reshape", data, (x,), fn)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    data = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def fn(g):
        return (np.transpose(g, inv),)

    return _result("transpose", data, (x,), fn)


def take(x, idx) -> Tensor:
    """Basic indexing (ints/slices); gradient scatters back into place."""
    x = as_tensor(x)
    data = x.data[idx]

    def fn(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _result("slice", np.asarray(data), (x,), fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _result("concat", data, tuple(parts), fn)


# ---------------------------------------------------------------------------
# neural-net primitives
# ---------------------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _result("softmax", y, (x,), fn)


def layer_norm(x, gain=None, bias=None, axis: int = -1, eps: float = _LN_EPS) -> Tensor:
    """Normalize to zero mean / unit population variance over ``axis``.

    eps sits inside the square root. gain/bias broadcast over the
    normalized axis; omit them for the bare normalization.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"layer_norm axis {axis} invalid for shape {x.shape}")
    mu = tensor_mean(x, axis=axis, keepdims=True)
    xc = sub(x, mu)
    var = tensor_mean(mul(xc, xc), axis=axis, keepdims=True)
    inv = power(add(var, eps), -0.5)
    y = mul(xc, inv)
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    return y


def conv1d(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """Depthwise 1-D convolution over the second-to-last axis.

    x: (..., T, C); kernel: (K, C), one filter per channel; "same"
    zero padding so the output keeps length T. Only stride 1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride != 1:
        raise ContractError("conv1d supports stride 1 only")
    if kernel.ndim != 2:
        raise ShapeError(f"conv1d kernel must be (K, C), got {kernel.shape}")
    if x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: x {x.shape} incompatible with kernel {kernel.shape}")
    k, c = kernel.shape
    t = x.shape[-2]
    pad_l = k // 2
    pad_r = k - 1 - pad_l
    pads = [(0, 0)] * (x.ndim - 2) + [(pad_l, pad_r), (0, 0)]
    xp = np.pad(x.data, pads)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += kernel.data[j] * xp[..., j : j + t, :]

    parents: tuple[Tensor, ...]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c,):
            raise ShapeError(f"conv1d bias must be ({c},), got {bias.shape}")
        out = out + bias.data
        parents = (x, kernel, bias)
    else:
        parents = (x, kernel)

    def fn(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for j in range(k):
            gxp[..., j : j + t, :] += g * kernel.data[j]
            gk[j] = np.sum(g * xp[..., j : j + t, :], axis=tuple(range(g.ndim - 1)))
        gx = gxp[..., pad_l : pad_l + t, :]
        if bias is not None:
            gb = np.sum(g, axis=tuple(range(g.ndim - 1)))
            return gx, gk, gb
        return gx, gk

    return _result("conv1d", out, parents, fn)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be scalar-valued and deterministic. Error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(x)
        tape.backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    for idx in np.ndindex(x.data.shape):
        orig = x.data[idx]
        x.data[idx] = orig + eps
        hi = f(Tensor(x.data)).item()
        x.data[idx] = orig - eps
        lo = f(Tensor(x.data)).item()
        x.data[idx] = orig
        numeric[idx] = (hi - lo) / (2.0 * eps)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(np.max(err)) if err.size else 0.0


def finite_difference_grads(
    f: Callable[[], float], params: Iterable[Tensor], eps: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradients of a closure w.r.t. each parameter tensor.

    Perturbs parameter storage in place (restoring it), so ``f`` must read
    the live tensors. Used by module-level gradient checks where one
    analytic backward is compared against many numeric probes.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            hi = f()
            p.data[idx] = orig - eps
            lo = f()
            p.data[idx] = orig
            g[idx] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads
