"""Dense float64 tensors with tape-ordered reverse-mode differentiation.

Every differentiable operation records a node holding its operands and a
local backward rule. ``backward`` replays the reachable nodes in reverse
execution order, so the tape order is always a valid topological order.
Broadcasting follows numpy rules; backward rules sum gradients back over
broadcast axes.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

MASK_VALUE = -1e9

_node_counter = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible for an operation."""


class GraphError(RuntimeError):
    """Misuse of the compute graph (non-scalar loss, repeated backward)."""


class _Node:
    __slots__ = ("seq", "parents", "backward_fn", "name")

    def __init__(self, parents, backward_fn, name):
        self.seq = next(_node_counter)
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name


class Tensor:
    """Row-major float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node: Optional[_Node] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------
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
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, name: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._node = _Node(tuple(parents), backward_fn, name) if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- elementwise unary ----------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(a.data * on, (a,), lambda g: (g * on,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw, "gelu")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "relu": relu,
    "gelu": gelu,
}


def elementwise(op: str, *operands):
    """Dispatch a pointwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- linear algebra and structure ----------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(ts))
        )

    return _make(out, ts, bw, "concat")


def concat_cols(a, b) -> Tensor:
    """Column-wise concatenation ``a ⊕ b`` of two matrices with equal row count."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_cols: row shapes differ, {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def row_sum(x) -> Tensor:
    """Sum over the last axis, keeping it as a width-1 column."""
    return sum_(x, axis=-1, keepdims=True)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), bw, "getitem")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the table."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(out, (table,), bw, "embedding")


def dropout(a, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return as_tensor(a)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(keep))


# -- normalisation and losses --------------------------------------------

def softmax_rows(x, mask=None) -> Tensor:
    """Softmax over the last axis of ``x + mask``.

    ``mask`` is an additive constant (0 keeps a column, ``MASK_VALUE`` drops it)
    and must broadcast against ``x``. The row maximum is subtracted first.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_rows: empty last axis in shape {x.shape}")
    z = x.data
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
        try:
            z = z + m
        except ValueError:
            raise DimensionError(f"softmax_rows: mask {m.shape} does not fit {x.shape}") from None
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    if out.shape != x.shape:
        out = np.ascontiguousarray(out)

    def bw(g):
        gx = out * (g - (g * out).sum(axis=-1, keepdims=True))
        return (_unbroadcast(gx, x.shape),)

    return _make(out, (x,), bw, "softmax_rows")


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def bw(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits[N, C]`` against integer ``labels[N]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(len(labels))
    n = len(labels)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")


# -- backward -------------------------------------------------------------

def graph_of(loss: Tensor) -> list[Tensor]:
    """Non-leaf tensors reachable from ``loss``, in execution order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        order.append(t)
        stack.extend(p for p in t._node.parents if p.requires_grad)
    order.sort(key=lambda t: t._node.seq)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

    The graph is consumed: nodes are released afterwards, so a second call on
    the same loss raises ``GraphError``. Leaf gradients keep accumulating across
    separate graphs until ``zero_grads`` is called.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad and loss.grad is not None:
            raise GraphError("backward called twice on a consumed graph")
        raise GraphError("loss is not connected to any tracked tensor")

    order = graph_of(loss)[::-1]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(id(t), None)
        node = t._node
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            if p._node is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            elif id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for t in order:
        t._node = None
    loss.grad = np.ones_like(loss.data)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- finite-difference oracle --------------------------------------------

def numerical_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. components of ``x``.

    ``indices`` (flat positions) restricts the work; other entries stay 0.
    ``x.data`` is perturbed in place and restored.
    """
    flat = x.data.reshape(-1)
    if not np.shares_memory(flat, x.data):
        raise ValueError("numerical_grad needs contiguous tensor data")
    out = np.zeros(flat.size)
    for k in (range(flat.size) if indices is None else indices):
        orig = flat[k]
        flat[k] = orig + eps
        fp = _scalar(f())
        flat[k] = orig - eps
        fm = _scalar(f())
        flat[k] = orig
        out[k] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.shape)


def _scalar(t) -> float:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.size != 1:
        raise GraphError(f"gradient check needs a scalar function, got shape {arr.shape}")
    return float(arr.reshape(-1)[0])


def grad_check(f: Callable[..., Tensor], x, eps: float = 1e-5, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps the tensor(s) to a scalar tensor. ``x`` is one tensor or a list
    of tensors; all are treated as inputs. The error per component is
    ``|analytic - numeric| / max(1, |numeric|)``. With ``max_entries`` only a
    random subset of that many components per tensor is differenced.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    call = (lambda: f(*xs)) if not isinstance(x, (list, tuple)) else (lambda: f(xs))
    out = call()
    if not isinstance(out, Tensor) or out.size != 1:
        raise GraphError("gradient check needs a scalar function")
    backward(out)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, max_entries, replace=False))
        numeric = numerical_grad(call, t, eps, idx)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        if idx is not None:
            err = err.reshape(-1)[idx]
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
