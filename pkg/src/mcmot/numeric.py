"""Small dense-matrix substrate with reverse-mode differentiation.

Everything the attention layers and losses compute flows through
:class:`Tensor`, a 2-D float64 matrix node in a dynamically built
computation graph.  Values are plain numpy arrays (row-major); the graph
is rebuilt on every forward pass and torn down afterwards, which keeps
the implementation to a plain tape over a topological sort.

A single computation graph must be owned and traversed by one thread at
a time; the pure helpers at module level are safe to share.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
    return arr


class Tensor:
    """A matrix value plus gradient slot and backward closure.

    ``op`` records the producing operation for debugging of backward
    traversals.  Gradients accumulate (+=) so a value used twice gets
    contributions from both uses; the gradient array is allocated lazily
    so forward-only evaluation stays cheap.
    """

    __slots__ = ("value", "_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[], None] | None = None,
        op: str = "leaf",
    ):
        self.value = _as_matrix(value)
        if not np.isfinite(self.value).all():
            raise ValueError(f"non-finite entries in tensor produced by {op!r}")
        self._grad = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        else:
            self._grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # Operator sugar; floats are wrapped as constant leaves.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    # Comparisons act on values only (used for branch decisions in
    # piecewise code such as box overlap); they do not build graph nodes.
    def __lt__(self, other):
        return self.item() < _value_of(other)

    def __gt__(self, other):
        return self.item() > _value_of(other)

    def __le__(self, other):
        return self.item() <= _value_of(other)

    def __ge__(self, other):
        return self.item() >= _value_of(other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _value_of(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def constant(value) -> Tensor:
    return Tensor(value, op="const")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy row/scalar broadcast)."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot reduce grad {grad.shape} to {shape}")
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    ra, ca = a.shape
    rb, cb = b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = Tensor(a.value + b.value, (a, b), op="add")

    def backward():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad += _unbroadcast(out.grad, b.shape)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    out = Tensor(a.value - b.value, (a, b), op="sub")

    def backward():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad -= _unbroadcast(out.grad, b.shape)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = Tensor(a.value * b.value, (a, b), op="mul")

    def backward():
        a.grad += _unbroadcast(out.grad * b.value, a.shape)
        b.grad += _unbroadcast(out.grad * a.value, b.shape)

    out._backward = backward
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")
    out = Tensor(a.value / b.value, (a, b), op="div")

    def backward():
        a.grad += _unbroadcast(out.grad / b.value, a.shape)
        b.grad += _unbroadcast(-out.grad * a.value / (b.value**2), b.shape)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; raises naming both shapes on a mismatch."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} (inner dims differ)")
    out = Tensor(a.value @ b.value, (a, b), op="matmul")

    def backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.value.T.copy(), (a,), op="transpose")

    def backward():
        a.grad += out.grad.T

    out._backward = backward
    return out


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.value.size:
        raise ShapeError(f"reshape: {a.shape} has {a.value.size} entries, not {rows * cols}")
    out = Tensor(a.value.reshape(rows, cols), (a,), op="reshape")

    def backward():
        a.grad += out.grad.reshape(a.shape)

    out._backward = backward
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({[p.shape for p in parts]})")
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), tuple(parts), op="concat_cols")
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[:, lo:hi]

    out._backward = backward
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ ({[p.shape for p in parts]})")
    out = Tensor(np.concatenate([p.value for p in parts], axis=0), tuple(parts), op="concat_rows")
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[lo:hi, :]

    out._backward = backward
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[start:stop, :].copy(), (a,), op="slice_rows")

    def backward():
        a.grad[start:stop, :] += out.grad

    out._backward = backward
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[:, start:stop].copy(), (a,), op="slice_cols")

    def backward():
        a.grad[:, start:stop] += out.grad

    out._backward = backward
    return out


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.value[idx, :], (a,), op="gather_rows")

    def backward():
        np.add.at(a.grad, idx, out.grad)

    out._backward = backward
    return out


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    out = Tensor([[a.value.sum()]], (a,), op="total")

    def backward():
        a.grad += out.grad[0, 0]

    out._backward = backward
    return out


def sum_cols(a: Tensor) -> Tensor:
    """Row-wise sum, shape (rows, 1)."""
    out = Tensor(a.value.sum(axis=1, keepdims=True), (a,), op="sum_cols")

    def backward():
        a.grad += out.grad

    out._backward = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    return total(a) * (1.0 / a.value.size)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.value), (a,), op="exp")

    def backward():
        a.grad += out.grad * out.value

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), (a,), op="log")

    def backward():
        a.grad += out.grad / a.value

    out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.value)
    out = Tensor(s, (a,), op="sigmoid")

    def backward():
        a.grad += out.grad * s * (1.0 - s)

    out._backward = backward
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) via the stable -softplus(-x) form."""
    z = -a.value
    val = -(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    out = Tensor(val, (a,), op="log_sigmoid")
    sig_neg = _stable_sigmoid(-a.value)

    def backward():
        a.grad += out.grad * sig_neg

    out._backward = backward
    return out


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.value), (a,), op="sin")

    def backward():
        a.grad += out.grad * np.cos(a.value)

    out._backward = backward
    return out


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.value), (a,), op="cos")

    def backward():
        a.grad -= out.grad * np.sin(a.value)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    out = Tensor(a.value * mask, (a,), op="relu")

    def backward():
        a.grad += out.grad * mask

    out._backward = backward
    return out


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.value)
    out = Tensor(np.abs(a.value), (a,), op="abs")

    def backward():
        a.grad += out.grad * sign

    out._backward = backward
    return out


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; the gradient routes to the winning operand (ties to a)."""
    b = _wrap(b)
    _binary_shapes(a, b, "maximum")
    take_a = a.value >= b.value
    out = Tensor(np.where(take_a, a.value, b.value), (a, b), op="maximum")

    def backward():
        a.grad += _unbroadcast(out.grad * take_a, a.shape)
        b.grad += _unbroadcast(out.grad * ~take_a, b.shape)

    out._backward = backward
    return out


def minimum(a: Tensor, b) -> Tensor:
    b = _wrap(b)
    _binary_shapes(a, b, "minimum")
    take_a = a.value <= b.value
    out = Tensor(np.where(take_a, a.value, b.value), (a, b), op="minimum")

    def backward():
        a.grad += _unbroadcast(out.grad * take_a, a.shape)
        b.grad += _unbroadcast(out.grad * ~take_a, b.shape)

    out._backward = backward
    return out


def _fsum_rows(a: np.ndarray) -> np.ndarray:
    """Exactly rounded row sums; the result is independent of column order."""
    return np.array([[math.fsum(row)] for row in a])


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability.

    The normalizer uses exactly rounded summation, so permuting a row's
    entries permutes its softmax bit-exactly.
    """
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / _fsum_rows(e)
    out = Tensor(s, (a,), op="softmax_rows")

    def backward():
        dot = (out.grad * s).sum(axis=1, keepdims=True)
        a.grad += s * (out.grad - dot)

    out._backward = backward
    return out


def attention_apply(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted sum of value rows: out[k] = sum_j weights[k, j] * values[j].

    Equivalent to `weights @ values` but accumulated with exactly rounded
    summation so the result does not depend on the order of the summands;
    jointly permuting weight columns and value rows is then a bit-exact
    no-op, which is what permutation equivariance of attention requires.
    """
    if weights.shape[1] != values.shape[0]:
        raise ShapeError(f"attention_apply: {weights.shape} x {values.shape}")
    w, v = weights.value, values.value
    out_val = np.empty((w.shape[0], v.shape[1]))
    for k in range(w.shape[0]):
        contrib = w[k][:, None] * v
        for d in range(v.shape[1]):
            out_val[k, d] = math.fsum(contrib[:, d])
    out = Tensor(out_val, (weights, values), op="attention_apply")

    def backward():
        weights.grad += out.grad @ v.T
        values.grad += w.T @ out.grad

    out._backward = backward
    return out


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax (numerically safer than log(softmax(x)))."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_val = shifted - lse
    out = Tensor(out_val, (a,), op="log_softmax_rows")
    s = np.exp(out_val)

    def backward():
        a.grad += out.grad - s * out.grad.sum(axis=1, keepdims=True)

    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Row-wise normalization to zero mean / unit variance, then gain*.+bias.

    `gain` and `bias` are 1 x n and broadcast over rows.
    """
    n = x.shape[1]
    if gain.shape != (1, n) or bias.shape != (1, n):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs x {x.shape}")
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.value + bias.value, (x, gain, bias), op="layer_norm")

    def backward():
        dxhat = out.grad * gain.value
        # Standard layer-norm backward, vectorized per row.
        dvar = (dxhat * centered).sum(axis=1, keepdims=True) * (-0.5) * inv_std**3
        dmu = (-dxhat * inv_std).sum(axis=1, keepdims=True) + dvar * (-2.0 * centered).mean(
            axis=1, keepdims=True
        )
        x.grad += dxhat * inv_std + dvar * 2.0 * centered / n + dmu / n
        gain.grad += (out.grad * xhat).sum(axis=0, keepdims=True)
        bias.grad += out.grad.sum(axis=0, keepdims=True)

    out._backward = backward
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(node) into every ancestor's `.grad`.

    `output` must be 1x1.  All gradients in the graph are zeroed first, so
    each call yields exactly the derivative of this output; parameter
    leaves therefore carry fresh gradients after every call.
    """
    if output.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    order = _topo_order(output)
    for node in order:
        node._grad = None
    output.grad[...] = 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def finite_difference(
    f: Callable[[], float], values: Iterable[np.ndarray], eps: float = 1e-5
) -> list[np.ndarray]:
    """Central finite-difference gradients of `f` w.r.t. each array in place."""
    grads = []
    for arr in values:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads
