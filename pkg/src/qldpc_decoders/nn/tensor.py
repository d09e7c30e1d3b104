"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations executed inside a ``Tape`` context are recorded in execution
order; ``Tape.backward`` replays them in exact reverse, accumulating
gradients into every tensor that requires them.  Outside a tape nothing is
recorded, which is the inference path.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_owned")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        if not isinstance(value, np.ndarray):
            value = np.asarray(value)
            if value.dtype.kind != "f":
                value = value.astype(np.float64)
        self.value = value
        self.grad: np.ndarray | None = None
        self._owned = False
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)
        self._owned = True

    def _accumulate(self, g: np.ndarray) -> None:
        # the first contribution is borrowed, not copied; it is replaced by a
        # fresh array before anything is added to it
        if self.grad is None:
            self.grad = np.asarray(g, dtype=self.value.dtype)
            self._owned = False
        elif not self._owned:
            self.grad = self.grad + g
            self._owned = True
        else:
            self.grad += g

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Records (output, backward-closure) pairs in execution order."""

    _local = threading.local()

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    @staticmethod
    def current() -> "Tape | None":
        stack = getattr(Tape._local, "stack", None)
        return stack[-1] if stack else None

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Reverse pass from a scalar ``loss``; any of ``params`` it never reaches gets a zero gradient."""
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)
                if out is not loss:
                    out.grad = None  # intermediate gradients are not needed once propagated
        for t in params:
            if t.grad is None:
                t.zero_grad()


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap constants; floating arrays keep their dtype, everything else becomes ``dtype`` (default f64)."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype.kind == "f" and arr.ndim else np.float64
    return Tensor(arr.astype(dtype, copy=False))


def _operands(a, b) -> tuple[Tensor, Tensor]:
    """Constants adopt the dtype of the tensor they are combined with."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.value.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.value.dtype), b
    return as_tensor(a), as_tensor(b)


def _record(out: Tensor, inputs: Sequence[Tensor], fn: Callable[[np.ndarray], None]) -> Tensor:
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("add", a, b)
    out = Tensor(a.value + b.value)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.value - b.value)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.value * b.value)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return _record(out, (a, b), back)


def _unary(x: Tensor, value: np.ndarray, dfn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    out = Tensor(value)

    def back(g):
        x._accumulate(g * dfn(out.value))

    return _record(out, (x,), back)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.tanh(x.value), lambda y: 1.0 - y * y)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form never overflows
    y = np.tanh(0.5 * x.value)
    y += 1.0
    y *= 0.5
    return _unary(x, y, lambda y: y * (1.0 - y))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _unary(x, np.where(mask, x.value, 0.0), lambda _: mask)


def exp(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.exp(x.value), lambda y: y)


def log(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    return _unary(x, np.log(v), lambda _: 1.0 / v)


def atanh(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    return _unary(x, np.arctanh(v), lambda _: 1.0 / (1.0 - v * v))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside [lo, hi]."""
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _unary(x, np.clip(x.value, lo, hi), lambda _: inside)


# ---------------------------------------------------------------------------
# shape and linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b`` for a of shape (..., k) and b of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    a2 = a.value.reshape(-1, a.shape[-1])
    out = Tensor((a2 @ b.value).reshape(a.shape[:-1] + (b.shape[1],)))

    def back(g):
        g2 = g.reshape(-1, b.shape[1])
        if a.requires_grad:
            a._accumulate((g2 @ b.value.T).reshape(a.shape))
        if b.requires_grad:
            b._accumulate(a2.T @ g2)

    return _record(out, (a, b), back)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        value = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    out = Tensor(value)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accumulate(part)

    return _record(out, xs, back)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.array(x.value[index], copy=True))

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        x._accumulate(full)

    return _record(out, (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.value.reshape(shape))
    return _record(out, (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = Tensor(np.asarray(x.value.sum(axis=axis, keepdims=keepdims)))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _record(out, (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# graph operations: leading axis indexes nodes or edges


def incidence(index: np.ndarray, size: int, dtype=np.float64) -> sp.csr_matrix:
    """Sparse (size, len(index)) matrix summing rows that share an index."""
    index = np.asarray(index, dtype=np.int64)
    return sp.csr_matrix((np.ones(index.size, dtype=dtype), (index, np.arange(index.size))), shape=(size, index.size))


def _sparse_apply(S: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    flat = x.reshape(x.shape[0], int(np.prod(x.shape[1:])))
    return np.asarray(S @ flat).reshape((S.shape[0],) + x.shape[1:])


def gather(x, index: np.ndarray, scatter: sp.csr_matrix | None = None) -> Tensor:
    """Rows ``x[index]``; ``scatter`` may pass a precomputed ``incidence(index, len(x))``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(x.value[index])

    def back(g):
        S = scatter if scatter is not None else incidence(index, x.shape[0])
        x._accumulate(_sparse_apply(S, g))

    return _record(out, (x,), back)


def segment_sum(x, S: sp.csr_matrix) -> Tensor:
    """Sum rows of ``x`` into segments: ``S @ x`` with S from :func:`incidence`."""
    x = as_tensor(x)
    if S.shape[1] != x.shape[0]:
        raise ShapeError(f"segment_sum: incidence {S.shape} does not match rows {x.shape[0]}")
    out = Tensor(_sparse_apply(S, x.value))
    ST = S.T.tocsr()
    return _record(out, (x,), lambda g: x._accumulate(_sparse_apply(ST, g)))


def segment_softmax(scores, segment: np.ndarray, S: sp.csr_matrix) -> Tensor:
    """Softmax of ``scores`` (E, ...) within groups of rows sharing ``segment``."""
    x = as_tensor(scores)
    segment = np.asarray(segment, dtype=np.int64)
    mx = np.full((S.shape[0],) + x.shape[1:], -np.inf)
    np.maximum.at(mx, segment, x.value)
    ez = np.exp(x.value - mx[segment])
    den = _sparse_apply(S, ez)
    y = ez / den[segment]
    out = Tensor(y)

    def back(g):
        gy = _sparse_apply(S, g * y)
        x._accumulate(y * (g - gy[segment]))

    return _record(out, (x,), back)


def edge_dot(a, b) -> Tensor:
    """Row-wise dot product over the last axis: (..., d) x (..., d) -> (...)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"edge_dot: shapes {a.shape} and {b.shape} differ")
    out = Tensor(np.einsum("...d,...d->...", a.value, b.value))

    def back(g):
        if a.requires_grad:
            a._accumulate(g[..., None] * b.value)
        if b.requires_grad:
            b._accumulate(g[..., None] * a.value)

    return _record(out, (a, b), back)


def padded_loo_product(x, rows: np.ndarray, slots: np.ndarray, shape: tuple[int, int]) -> Tensor:
    """Leave-one-out products within groups.

    Row ``e`` of ``x`` sits at padded position ``(rows[e], slots[e])`` of a
    ``shape``-sized grid filled with ones; output ``e`` is the product of the
    other entries in its grid row.  Division-free, so zeros are exact.
    """
    x = as_tensor(x)
    C, D = shape
    pad = np.ones((C, D) + x.shape[1:], dtype=x.value.dtype)
    pad[rows, slots] = x.value

    def loo(p):
        pre = np.ones_like(p)
        suf = np.ones_like(p)
        if p.shape[1] > 1:
            pre[:, 1:] = np.cumprod(p[:, :-1], axis=1)
            suf[:, :-1] = np.cumprod(p[:, :0:-1], axis=1)[:, ::-1]
        return pre * suf

    out = Tensor(loo(pad)[rows, slots])

    def back(g):
        gpad = np.zeros_like(pad)
        gpad[rows, slots] = g
        grad = np.zeros_like(pad)
        # d out_j / d x_i = prod over k not in {i, j}: LOO of the row with slot i set to 1
        for i in range(D):
            masked = pad.copy()
            masked[:, i] = 1.0
            contrib = loo(masked) * gpad
            contrib[:, i] = 0.0
            grad[:, i] = contrib.sum(axis=1)
        x._accumulate(grad[rows, slots])

    return _record(out, (x,), back)


def transpose(x) -> Tensor:
    """Transpose of a 2D tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2D, got shape {x.shape}")
    out = Tensor(x.value.T.copy())
    return _record(out, (x,), lambda g: x._accumulate(g.T))


def edge_mlp(a, b, src: np.ndarray, dst: np.ndarray, S_src: sp.csr_matrix, S_dst: sp.csr_matrix,
             b1, W2, b2) -> Tensor:
    """Fused per-edge two-layer ReLU MLP ``relu(relu(a[src] + b[dst] + b1) @ W2 + b2)``.

    ``a`` and ``b`` hold the first linear layer already applied per node
    (the weight split by endpoint), so only the hidden activation and the
    output are kept for the backward pass.
    """
    a, b, b1, W2, b2 = (as_tensor(t) for t in (a, b, b1, W2, b2))
    h1 = a.value[src]
    h1 += b.value[dst]
    h1 += b1.value
    np.maximum(h1, 0.0, out=h1)
    m = h1 @ W2.value
    m += b2.value
    np.maximum(m, 0.0, out=m)
    out = Tensor(m)

    def back(g):
        gz = g * (m > 0)
        lead = gz.reshape(-1, gz.shape[-1])
        if W2.requires_grad:
            W2._accumulate(h1.reshape(-1, h1.shape[-1]).T @ lead)
        if b2.requires_grad:
            b2._accumulate(lead.sum(axis=0))
        gh = gz @ W2.value.T
        gh *= h1 > 0
        if b1.requires_grad:
            b1._accumulate(gh.reshape(-1, gh.shape[-1]).sum(axis=0))
        if a.requires_grad:
            a._accumulate(_sparse_apply(S_src, gh))
        if b.requires_grad:
            b._accumulate(_sparse_apply(S_dst, gh))

    return _record(out, (a, b, b1, W2, b2), back)


def edge_attention(msg, query, dst: np.ndarray, S_dst: sp.csr_matrix, scale: float) -> Tensor:
    """Fused attention pooling: ``sum_e alpha_e msg_e`` per destination node.

    Scores are ``scale * <msg_e, query[dst_e]>`` normalised with a softmax
    over the edges entering each destination.  Nodes with no incoming edge
    get zeros.
    """
    msg, query = as_tensor(msg), as_tensor(query)
    qe = query.value[dst]
    score = np.einsum("...d,...d->...", msg.value, qe) * scale
    mx = np.full((S_dst.shape[0],) + score.shape[1:], -np.inf, dtype=score.dtype)
    np.maximum.at(mx, dst, score)
    alpha = np.exp(score - mx[dst])
    alpha /= _sparse_apply(S_dst, alpha)[dst]
    out = Tensor(_sparse_apply(S_dst, alpha[..., None] * msg.value))

    def back(g):
        ge = g[dst]
        galpha = np.einsum("...d,...d->...", ge, msg.value)
        gscore = alpha * (galpha - _sparse_apply(S_dst, alpha * galpha)[dst]) * scale
        if msg.requires_grad:
            gm = alpha[..., None] * ge
            gm += gscore[..., None] * query.value[dst]
            msg._accumulate(gm)
        if query.requires_grad:
            query._accumulate(_sparse_apply(S_dst, gscore[..., None] * msg.value))

    return _record(out, (msg, query), back)
