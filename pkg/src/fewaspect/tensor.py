"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is deliberately small: exactly the operations the episodic
model needs, each with a hand-written backward rule. Values live in numpy
arrays (0-d scalars, 1-d vectors, 2-d matrices). A forward pass records a
graph of parent links and backward closures; ``backward`` walks that graph
once in reverse topological order and accumulates gradients into every
tensor created with ``requires_grad=True``.

Gradient semantics:

* Each forward graph supports exactly one ``backward`` call; a second call
  on the same loss raises ``ValueError``. Rebuild the forward pass instead.
* Leaf gradients accumulate across backward calls on *separate* graphs
  (the usual training pattern); reset them with ``zero_grads`` between
  optimizer steps.
* Ops executed under ``no_grad()`` produce plain constants and record
  nothing, which keeps evaluation passes cheap.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy import special as _special

from .errors import NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array plus an optional gradient buffer and graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray):
            self.data = data.astype(np.float64, copy=False)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values with no graph attachment."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _add_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data)
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        return out
    return Tensor(data)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Visits each graph node exactly once (iterative reverse topological
    order). Raises on a non-scalar loss or on a repeated call for the
    same loss tensor.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise ValueError("backward already ran for this graph; rebuild the forward pass")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")

    order: list[Tensor] = []
    visited = {id(loss)}
    stack: list[tuple[Tensor, object]] = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            order.append(node)
            stack.pop()

    _add_grad(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    loss._consumed = True


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b):
    """a + b for matching shapes, a (k,d) matrix + (d,) row vector, or a float."""
    if not isinstance(b, Tensor):
        out_data = a.data + float(b)

        def bw_const():
            _add_grad(a, out.grad)

        out = _result(out_data, (a,), bw_const)
        return out

    if a.data.shape == b.data.shape:
        def bw_same():
            _add_grad(a, out.grad)
            _add_grad(b, out.grad)

        out = _result(a.data + b.data, (a, b), bw_same)
        return out

    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def bw_row():
            _add_grad(a, out.grad)
            _add_grad(b, out.grad.sum(axis=0))

        out = _result(a.data + b.data, (a, b), bw_row)
        return out

    raise ShapeError(f"cannot add shapes {a.data.shape} and {b.data.shape}")


def sub(a: Tensor, b):
    """Elementwise a - b for matching shapes (b may be a float)."""
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cannot subtract shapes {a.data.shape} and {b.data.shape}")

    def bw():
        _add_grad(a, out.grad)
        _add_grad(b, -out.grad)

    out = _result(a.data - b.data, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor):
    """Elementwise product, matching shapes only."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cannot multiply shapes {a.data.shape} and {b.data.shape}")

    def bw():
        _add_grad(a, b.data * out.grad)
        _add_grad(b, a.data * out.grad)

    out = _result(a.data * b.data, (a, b), bw)
    return out


def scale(a: Tensor, c) -> Tensor:
    """a * c for a plain float c."""
    c = float(c)

    def bw():
        _add_grad(a, c * out.grad)

    out = _result(a.data * c, (a,), bw)
    return out


def square(a: Tensor) -> Tensor:
    def bw():
        _add_grad(a, 2.0 * a.data * out.grad)

    out = _result(a.data * a.data, (a,), bw)
    return out


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; inputs must be nonnegative."""
    y = np.sqrt(a.data)

    def bw():
        _add_grad(a, out.grad * 0.5 / y)

    out = _result(y, (a,), bw)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw():
        _add_grad(a, (1.0 - y * y) * out.grad)

    out = _result(y, (a,), bw)
    return out


def softplus(a: Tensor) -> Tensor:
    """ln(1 + e^x), computed stably for large |x|."""
    y = np.logaddexp(0.0, a.data)

    def bw():
        _add_grad(a, _special.expit(a.data) * out.grad)

    out = _result(y, (a,), bw)
    return out


def lgamma(a: Tensor) -> Tensor:
    """Log-gamma, elementwise; inputs must be positive."""
    y = _special.gammaln(a.data)

    def bw():
        _add_grad(a, _special.digamma(a.data) * out.grad)

    out = _result(y, (a,), bw)
    return out


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum all entries (axis=None, scalar result) or along one axis of a matrix."""
    if axis is None:
        def bw_all():
            _add_grad(a, np.broadcast_to(out.grad, a.data.shape))

        out = _result(a.data.sum(), (a,), bw_all)
        return out

    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"axis sum needs a matrix and axis 0 or 1, got shape {a.data.shape}")

    def bw_axis():
        g = np.expand_dims(out.grad, axis)
        _add_grad(a, np.broadcast_to(g, a.data.shape))

    out = _result(a.data.sum(axis=axis), (a,), bw_axis)
    return out


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    """Arithmetic mean over all entries or along one axis of a matrix."""
    if axis is None:
        count = a.data.size

        def bw_all():
            _add_grad(a, np.broadcast_to(out.grad / count, a.data.shape))

        out = _result(a.data.mean(), (a,), bw_all)
        return out

    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"axis mean needs a matrix and axis 0 or 1, got shape {a.data.shape}")
    count = a.data.shape[axis]

    def bw_axis():
        g = np.expand_dims(out.grad / count, axis)
        _add_grad(a, np.broadcast_to(g, a.data.shape))

    out = _result(a.data.mean(axis=axis), (a,), bw_axis)
    return out


# ---------------------------------------------------------------------------
# linear algebra and structure ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for the 2d@2d, 1d@2d, 2d@1d and 1d@1d cases."""
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-d and 2-d operands, got {A.shape} @ {B.shape}")
    if A.shape[-1] != B.shape[0]:
        raise ShapeError(f"inner dimensions mismatch: {A.shape} @ {B.shape}")

    if A.ndim == 2 and B.ndim == 2:
        def bw():
            _add_grad(a, out.grad @ B.T)
            _add_grad(b, A.T @ out.grad)
    elif A.ndim == 1 and B.ndim == 2:
        def bw():
            _add_grad(a, B @ out.grad)
            _add_grad(b, np.outer(A, out.grad))
    elif A.ndim == 2 and B.ndim == 1:
        def bw():
            _add_grad(a, np.outer(out.grad, B))
            _add_grad(b, A.T @ out.grad)
    else:
        def bw():
            _add_grad(a, out.grad * B)
            _add_grad(b, out.grad * A)

    out = _result(A @ B, (a, b), bw)
    return out


def take_rows(matrix: Tensor, indices) -> Tensor:
    """Gather rows of a matrix (embedding lookup); scatter-adds on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if matrix.data.ndim != 2:
        raise ShapeError(f"take_rows needs a matrix, got shape {matrix.data.shape}")
    n_rows = matrix.data.shape[0]
    if idx.size == 0:
        raise ShapeError("take_rows needs at least one index")
    if (idx < 0).any() or (idx >= n_rows).any():
        bad = idx[(idx < 0) | (idx >= n_rows)][0]
        raise IndexError(f"row index {bad} out of range for table with {n_rows} rows")

    def bw():
        if matrix.grad is None:
            matrix.grad = np.zeros_like(matrix.data)
        np.add.at(matrix.grad, idx, out.grad)

    out = _result(matrix.data[idx], (matrix,), bw)
    return out


def concat(parts: list) -> Tensor:
    """Concatenate scalars and vectors into one vector."""
    if not parts:
        raise ShapeError("concat needs at least one part")
    pieces = [np.atleast_1d(p.data) for p in parts]
    for piece in pieces:
        if piece.ndim != 1:
            raise ShapeError("concat accepts scalars and vectors only")
    sizes = [p.size for p in pieces]
    offsets = np.cumsum([0] + sizes)

    def bw():
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _add_grad(part, out.grad[lo:hi].reshape(part.data.shape))

    out = _result(np.concatenate(pieces), tuple(parts), bw)
    return out


def vstack(parts: list) -> Tensor:
    """Stack equal-length vectors into the rows of a matrix."""
    if not parts:
        raise ShapeError("vstack needs at least one part")
    width = parts[0].data.shape
    for p in parts:
        if p.data.ndim != 1 or p.data.shape != width:
            raise ShapeError("vstack needs equal-length vectors")

    def bw():
        for i, part in enumerate(parts):
            _add_grad(part, out.grad[i])

    out = _result(np.stack([p.data for p in parts]), tuple(parts), bw)
    return out


def concat_rows(parts: list) -> Tensor:
    """Concatenate matrices with equal column counts along the row axis."""
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    cols = parts[0].data.shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError("concat_rows needs matrices with matching column counts")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw():
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _add_grad(part, out.grad[lo:hi])

    out = _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)
    return out


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Length-preserving 1-d convolution over a sequence of row vectors.

    ``x`` is (n, d_in), ``kernel`` is (m, d_in, d_out) with odd window m,
    ``bias`` is (d_out,). The sequence is zero-padded by (m-1)/2 rows on
    each side, so output row i depends only on input rows within the
    window centred at i.
    """
    X, K, B = x.data, kernel.data, bias.data
    if X.ndim != 2 or K.ndim != 3 or B.ndim != 1:
        raise ShapeError(
            f"conv1d_same needs (n,d_in), (m,d_in,d_out), (d_out,); got {X.shape}, {K.shape}, {B.shape}"
        )
    m = K.shape[0]
    if m % 2 == 0:
        raise ShapeError(f"convolution window must be odd, got {m}")
    if K.shape[1] != X.shape[1]:
        raise ShapeError(f"kernel input channels {K.shape[1]} != sequence channels {X.shape[1]}")
    if B.shape[0] != K.shape[2]:
        raise ShapeError(f"bias width {B.shape[0]} != kernel output channels {K.shape[2]}")

    n = X.shape[0]
    pad = (m - 1) // 2
    padded = np.zeros((n + 2 * pad, X.shape[1]))
    padded[pad:pad + n] = X
    out_data = np.broadcast_to(B, (n, B.shape[0])).copy()
    for k in range(m):
        out_data += padded[k:k + n] @ K[k]

    def bw():
        g = out.grad
        _add_grad(bias, g.sum(axis=0))
        if kernel.requires_grad:
            dk = np.empty_like(K)
            for k in range(m):
                dk[k] = padded[k:k + n].T @ g
            _add_grad(kernel, dk)
        if x.requires_grad:
            dpad = np.zeros_like(padded)
            for k in range(m):
                dpad[k:k + n] += g @ K[k].T
            _add_grad(x, dpad[pad:pad + n])

    out = _result(out_data, (x, kernel, bias), bw)
    return out


def softmax_t(scores: Tensor, temperature: float) -> Tensor:
    """Temperature-scaled softmax over a vector, stabilised by max subtraction.

    The normalising sum uses ``math.fsum`` so the output is exactly
    equivariant under permutations of the input.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = scores.data
    if s.ndim != 1 or s.size < 1:
        raise ShapeError(f"softmax_t needs a nonempty vector, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise NumericError("softmax_t received non-finite scores")
    z = (s - s.max()) / temperature
    e = np.exp(z)
    y = e / math.fsum(e)

    def bw():
        g = out.grad
        _add_grad(scores, y * (g - np.dot(g, y)) / temperature)

    out = _result(y, (scores,), bw)
    return out


def softmax_values(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Plain-array counterpart of ``softmax_t`` for detached evaluation paths."""
    z = (scores - scores.max()) / temperature
    e = np.exp(z)
    return e / math.fsum(e)
