"""Reverse-mode automatic differentiation on dense numpy arrays.

A Tensor wraps an ndarray and records the operations applied to it; calling
``backward()`` on a scalar result accumulates gradients into every upstream
tensor created with ``requires_grad=True``. The op set is deliberately small:
exactly what the detection head needs (affine maps, pointwise nonlinearities,
reductions, softmax, layer norm, and a sparse gather used by RoI pooling).

Two numeric profiles are supported by construction: float64 for tests and
gradient checks, float32 for speed. Ops inherit the dtype of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse


class Tensor:
    """Dense n-dimensional array with an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor w.r.t. all leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for i, node in enumerate(order):
            interior = node._backward is not None
            if interior and node.grad is not None:
                node._backward(node.grad)
            # Free aggressively: once a node's gradient has been pushed to its
            # parents, neither its grad buffer nor the closure (which pins the
            # saved activations) is needed again. Leaves keep their grads.
            if interior:
                node.grad = None
            node._backward = None
            node._parents = ()
            order[i] = None


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order over the recorded graph (iterative)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """as_tensor both operands, casting bare Python numbers to the tensor
    side's dtype so scalar constants never promote float32 graphs to 64-bit.
    """
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(b, Tensor) and isinstance(a, (int, float)):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        if g.shape == t.data.shape:
            # copy (not adopt): g may alias a buffer shared with another parent
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        else:
            t.grad = np.zeros_like(t.data)
            t.grad += g
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch-broadcast semantics."""
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        # skip the dead side: pooled features enter with requires_grad False
        # and their half of the backward GEMMs would be discarded anyway
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2),
                                   a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g,
                                   b.data.shape))

    return _make(data, (a, b), backward)


def pow_const(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**exponent

    def backward(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# pointwise


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        _accum(a, g * mask)

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def cos(a) -> Tensor:
    a = as_tensor(a)
    data = np.cos(a.data)

    def backward(g):
        _accum(a, -g * np.sin(a.data))

    return _make(data, (a,), backward)


def sin(a) -> Tensor:
    a = as_tensor(a)
    data = np.sin(a.data)

    def backward(g):
        _accum(a, g * np.cos(a.data))

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(data, (a,), backward)


def clip(a, lo: float | None, hi: float | None) -> Tensor:
    """Clamp values; gradient passes only through the unclipped region."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data > lo
    if hi is not None:
        mask &= a.data < hi

    def backward(g):
        _accum(a, g * mask)

    return _make(data, (a,), backward)


def dropout(a, rate: float, mask: np.ndarray | None) -> Tensor:
    """Inverted dropout. ``mask=None`` means eval mode (identity)."""
    a = as_tensor(a)
    if mask is None or rate <= 0.0:
        return a
    scale = np.asarray(mask, dtype=a.dtype) / (1.0 - rate)
    return mul(a, Tensor(scale))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inv))

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(data, tuple(tensors), backward)


def _basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice, type(Ellipsis),
                              type(None))) for k in parts)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]
    # basic indexing never selects a cell twice, so += suffices; fancy
    # indexing may repeat cells and needs the unbuffered add
    basic = _basic_key(key)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        _accum(a, full)

    return _make(data, (a,), backward)


def take_rows(a, indices: np.ndarray) -> Tensor:
    """Select rows along axis 0 by integer index (duplicates allowed)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# fused kernels


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along one axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if a.data.shape[-1] == 0:
        raise ValueError("layer_norm over an empty axis")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        n = a.data.shape[-1]
        if gamma.requires_grad:
            red = tuple(range(g.ndim - 1))
            _accum(gamma, (g * xhat).sum(axis=red))
        if beta.requires_grad:
            red = tuple(range(g.ndim - 1))
            _accum(beta, g.sum(axis=red))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (gx - m1 - xhat * m2))

    return _make(data, (a, gamma, beta), backward)


def sparse_gather(weights: scipy.sparse.csr_matrix, x) -> Tensor:
    """Fixed sparse linear map of row-major features: ``weights @ x``.

    The weight matrix encodes sampling geometry (bilinear taps); it is a
    constant, so the only gradient path is through ``x``.
    """
    x = as_tensor(x)
    data = np.asarray(weights @ x.data)

    def backward(g):
        if x.requires_grad:
            _accum(x, np.asarray(weights.T @ g))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradReport:
    """Analytic-vs-finite-difference comparison for one function."""

    max_rel_err: float
    per_input: dict[str, float] = field(default_factory=dict)
    passed: bool = True
    tolerance: float = 1e-4


def grad_check(f, inputs: dict[str, np.ndarray], eps: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-8) -> GradReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` takes a dict of Tensors (rebuilt fresh per evaluation) and returns a
    scalar Tensor. Arrays must be float64. Relative error per coordinate uses
    the denominator max(|analytic|, |numeric|, floor); coordinates whose true
    gradient is exactly zero (dead ReLU paths) read finite-difference rounding
    noise, so composite checks raise the floor to judge them absolutely.
    """
    for name, arr in inputs.items():
        if np.asarray(arr).dtype != np.float64:
            raise ValueError(f"grad_check requires float64 inputs (got {name})")

    tensors = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
               for k, v in inputs.items()}
    out = f(tensors)
    out.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}

    def eval_at(overrides: dict[str, np.ndarray]) -> float:
        ts = {k: Tensor(overrides.get(k, inputs[k])) for k in inputs}
        return float(f(ts).data)

    report = GradReport(max_rel_err=0.0, tolerance=tol)
    for name in inputs:
        base = np.array(inputs[name], dtype=np.float64)
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = eval_at({name: base})
            flat[i] = orig - eps
            fm = eval_at({name: base})
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * eps)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        rel = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
        report.per_input[name] = rel
        report.max_rel_err = max(report.max_rel_err, rel)
    report.passed = report.max_rel_err <= tol
    return report
