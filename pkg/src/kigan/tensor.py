"""Float64 tensors with a reverse-mode gradient tape.

Operations record onto the innermost active :class:`GradTape`. Outside a tape
they still compute (inference mode) but nothing is recorded::

    with GradTape() as tape:
        loss = (w * x).sum()
    tape.backward(loss)
    w.grad

Broadcasting is limited to tensor-with-scalar; anything richer (bias rows,
gathers, segment reductions) has its own op with an explicit backward rule.
"""

from __future__ import annotations

import threading
from numbers import Number

import numpy as np

from .errors import DimensionError, EmptyInputError, NonFiniteError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError(op)


class Tensor:
    """N-dimensional float64 array that may participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        _check_finite("tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor._wrap(self.data, False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return elementwise("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("mul", self, -1.0), other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def tanh(self):
        return elementwise("tanh", self)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def relu(self):
        return elementwise("relu", self)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of differentiable operations.

    A tape is used for a single forward pass; parameters outlive it and
    accumulate into ``.grad`` when :meth:`backward` runs.
    """

    def __init__(self):
        self.nodes = []
        self._used = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, op, outputs, parents, backward):
        self.nodes.append((op, outputs, parents, backward))

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, grad=None):
        if self._used:
            raise RuntimeError("GradTape.backward called twice; tapes are single-use")
        self._used = True
        if grad is None:
            if loss.size != 1:
                raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads = {id(loss): np.asarray(grad, dtype=np.float64)}
        leaves = {id(loss): loss}
        for op, outputs, parents, backward in reversed(self.nodes):
            gs = [grads.pop(id(o), None) for o in outputs]
            if all(g is None for g in gs):
                continue
            if len(outputs) == 1:
                pgrads = backward(gs[0])
            else:
                gs = [np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, gs)]
                pgrads = backward(*gs)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if not np.isfinite(pg).all():
                    raise NonFiniteError(f"{op} backward")
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = pg
                    leaves[k] = p
        for k, g in grads.items():
            t = leaves[k]
            if not t.requires_grad:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g


class no_grad:
    """Suspend recording; ops inside run in inference mode."""

    def __enter__(self):
        stack = _tape_stack()
        self._saved = list(stack)
        stack.clear()
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack[:] = self._saved
        return False


def _emit(op, data, parents, backward):
    _check_finite(op, data)
    rg = any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, rg)
    if rg:
        tape = current_tape()
        if tape is not None:
            tape.record(op, (out,), parents, backward)
    return out


def _emit_many(op, datas, parents, backward):
    for d in datas:
        _check_finite(op, d)
    rg = any(p.requires_grad for p in parents)
    outs = tuple(Tensor._wrap(d, rg) for d in datas)
    if rg:
        tape = current_tape()
        if tape is not None:
            tape.record(op, outs, parents, backward)
    return outs


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- elementwise

_UNARY = ("tanh", "sigmoid", "relu", "exp", "log")
_BINARY = ("add", "sub", "mul")


def elementwise(kind, a, b=None):
    """Apply ``kind`` elementwise. Binary kinds take a same-shape tensor or a scalar."""
    if kind in _UNARY:
        if b is not None:
            raise TypeError(f"{kind} is unary")
        return _unary(kind, a)
    if kind not in _BINARY:
        raise ValueError(f"unknown elementwise op {kind!r}")
    if isinstance(b, Number):
        return _binary_scalar(kind, a, float(b))
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    if kind == "add":
        return _emit("add", ad + bd, (a, b), lambda g: (g, g))
    if kind == "sub":
        return _emit("sub", ad - bd, (a, b), lambda g: (g, -g))
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def _binary_scalar(kind, a, s):
    if kind == "add":
        return _emit("add", a.data + s, (a,), lambda g: (g,))
    if kind == "sub":
        return _emit("sub", a.data - s, (a,), lambda g: (g,))
    return _emit("mul", a.data * s, (a,), lambda g: (g * s,))


def _unary(kind, a):
    x = a.data
    if kind == "tanh":
        y = np.tanh(x)
        return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = _sigmoid(x)
        return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))
    if kind == "relu":
        mask = x > 0
        return _emit("relu", np.where(mask, x, 0.0), (a,), lambda g: (g * mask,))
    if kind == "exp":
        with np.errstate(over="ignore"):
            y = np.exp(x)
        return _emit("exp", y, (a,), lambda g: (g * y,))
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _emit("log", y, (a,), lambda g: (g / x,))


def clip(a, lo=None, hi=None):
    """Clamp values; gradient passes only where the value was not clamped."""
    x = a.data
    y = np.clip(x, lo, hi)
    keep = np.ones(x.shape, dtype=bool)
    if lo is not None:
        keep &= x >= lo
    if hi is not None:
        keep &= x <= hi
    return _emit("clip", y, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with the bias added to every row."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: cannot apply {weight.shape} to {x.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is None:
        return _emit("linear", y, (x, weight), lambda g: (g @ wd.T, xd.T @ g))
    if bias.shape != (wd.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} vs weight {wd.shape}")
    y = y + bias.data
    return _emit("linear", y, (x, weight, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


# ---------------------------------------------------------------- shape ops


def reshape(a, shape):
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit("reshape", y, (a,), lambda g: (g.reshape(old),))


def getitem(a, index):
    y = a.data[index]
    if not isinstance(y, np.ndarray):
        y = np.asarray(y)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.array(y, dtype=np.float64), (a,), backward)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    if not tensors:
        raise EmptyInputError("concat of zero tensors")
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _emit("concat", y, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise EmptyInputError("stack of zero tensors")
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _emit("stack", y, tuple(tensors), backward)


def take_rows(a, index):
    """Gather rows ``a[index]``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take_rows", a.data[index], (a,), backward)


def embedding_lookup(table, index):
    """Row ``index`` of ``table`` (an int gives one row, an int array a batch of rows)."""
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise IndexError(f"embedding index must be integer, got {index!r}")
    v = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"embedding index {index!r} outside [0, {v})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("embedding_lookup", table.data[idx], (table,), backward)


# ---------------------------------------------------------------- reductions


def tsum(a, axis=None):
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a, axis=None):
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise EmptyInputError("mean over an empty axis")
    return tsum(a, axis) * (1.0 / n)


def softmax(x, axis=-1):
    """Max-shifted softmax along ``axis``."""
    if x.ndim == 0:
        raise DimensionError("softmax of a 0-d tensor")
    try:
        n = x.shape[axis]
    except IndexError:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}") from None
    if n == 0:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), backward)


def max_pool_rows(x):
    """Column-wise maximum of an ``n x d`` tensor; ties route gradient to the lowest row."""
    if x.ndim != 2:
        raise DimensionError(f"max_pool_rows expects n x d, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("max_pool_rows over zero rows")
    arg = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[arg, cols] = g
        return (full,)

    return _emit("max_pool_rows", x.data[arg, cols], (x,), backward)


def row_norm(x):
    """Euclidean norm of each row of a 2-D tensor; the gradient at a zero row is zero."""
    if x.ndim != 2:
        raise DimensionError(f"row_norm expects 2-D input, got {x.shape}")
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=1))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        return ((g / safe)[:, None] * xd * (n > 0)[:, None],)

    return _emit("row_norm", n, (x,), backward)


# ---------------------------------------------------------------- segment ops
# Rows of ``x`` belong to segments ``seg`` (ints in [0, n_seg)). Segments need
# not be contiguous.


def _check_segments(op, x, seg, n_seg):
    seg = np.asarray(seg, dtype=np.intp)
    if x.ndim != 2 or seg.shape != (x.shape[0],):
        raise DimensionError(f"{op}: need n x d input with n segment ids")
    if seg.size and (seg.min() < 0 or seg.max() >= n_seg):
        raise IndexError(f"{op}: segment id outside [0, {n_seg})")
    return seg


def segment_sum(x, seg, n_seg):
    seg = _check_segments("segment_sum", x, seg, n_seg)
    out = np.zeros((n_seg, x.shape[1]))
    np.add.at(out, seg, x.data)
    return _emit("segment_sum", out, (x,), lambda g: (g[seg],))


def segment_softmax(x, seg, n_seg):
    """Softmax over the rows of each segment, independently per column."""
    seg = _check_segments("segment_softmax", x, seg, n_seg)
    m = np.full((n_seg, x.shape[1]), -np.inf)
    np.maximum.at(m, seg, x.data)
    e = np.exp(x.data - m[seg])
    s = np.zeros((n_seg, x.shape[1]))
    np.add.at(s, seg, e)
    y = e / s[seg]

    def backward(g):
        gy = g * y
        acc = np.zeros((n_seg, x.shape[1]))
        np.add.at(acc, seg, gy)
        return (gy - y * acc[seg],)

    return _emit("segment_softmax", y, (x,), backward)


def segment_max(x, seg, n_seg):
    """Column-wise max over the rows of each segment.

    Empty segments yield zero rows with no gradient. Ties route the gradient to
    the lowest row index.
    """
    seg = _check_segments("segment_max", x, seg, n_seg)
    n, d = x.shape
    m = np.full((n_seg, d), -np.inf)
    np.maximum.at(m, seg, x.data)
    present = np.zeros(n_seg, dtype=bool)
    present[seg] = True
    hit = x.data == m[seg]
    rows = np.broadcast_to(np.arange(n)[:, None], (n, d))
    first = np.full((n_seg, d), n, dtype=np.intp)
    np.minimum.at(first, seg, np.where(hit, rows, n))
    out = np.where(present[:, None], m, 0.0)
    src = first[present]
    dst = np.nonzero(present)[0]
    cols = np.broadcast_to(np.arange(d), src.shape)

    def backward(g):
        full = np.zeros((n, d))
        full[src, cols] = g[dst]
        return (full,)

    return _emit("segment_max", out, (x,), backward)


# ---------------------------------------------------------------- recurrent cell


def lstm_step(x, h, c, w_x, w_h, b):
    """One LSTM update on a batch of rows.

    Gate columns of ``w_x``, ``w_h`` and ``b`` are ordered input, forget,
    candidate, output. Returns ``(h_next, c_next)``.
    """
    if x.ndim != 2 or h.ndim != 2 or c.shape != h.shape:
        raise DimensionError(f"lstm_step: bad shapes x={x.shape} h={h.shape} c={c.shape}")
    dh = h.shape[1]
    if w_x.shape != (x.shape[1], 4 * dh) or w_h.shape != (dh, 4 * dh) or b.shape != (4 * dh,):
        raise DimensionError(
            f"lstm_step: params {w_x.shape}, {w_h.shape}, {b.shape} inconsistent with "
            f"d_in={x.shape[1]}, d_h={dh}"
        )
    xd, hd, cd = x.data, h.data, c.data
    z = xd @ w_x.data + hd @ w_h.data + b.data
    i = _sigmoid(z[:, :dh])
    f = _sigmoid(z[:, dh : 2 * dh])
    gg = np.tanh(z[:, 2 * dh : 3 * dh])
    o = _sigmoid(z[:, 3 * dh :])
    c_next = f * cd + i * gg
    tc = np.tanh(c_next)
    h_next = o * tc
    wxd, whd = w_x.data, w_h.data

    def backward(g_h, g_c):
        g_c = g_c + g_h * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                g_c * gg * i * (1.0 - i),
                g_c * cd * f * (1.0 - f),
                g_c * i * (1.0 - gg * gg),
                g_h * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        return (dz @ wxd.T, dz @ whd.T, g_c * f, xd.T @ dz, hd.T @ dz, dz.sum(axis=0))

    return _emit_many("lstm_step", (h_next, c_next), (x, h, c, w_x, w_h, b), backward)
