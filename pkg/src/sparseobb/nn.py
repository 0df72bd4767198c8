"""Neural net building blocks over the autodiff Tensor.

Parameters live in small dataclasses of Tensors; ``named_tensors`` walks any
nesting of dataclasses / lists / dicts and yields deterministic (name, tensor)
pairs, which is what the optimizer, serializer, and gradient checks iterate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def named_tensors(obj, prefix: str = ""):
    """Yield (dotted-name, Tensor) for every tensor under ``obj``.

    Order is field-declaration order for dataclasses, index order for
    sequences, sorted-key order for dicts, so it is stable across runs.
    """
    if isinstance(obj, Tensor):
        yield prefix or "param", obj
        return
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(child, name)
        return
    if isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from named_tensors(child, f"{prefix}.{i}" if prefix else str(i))
        return
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_tensors(obj[k], f"{prefix}.{k}" if prefix else str(k))
        return
    # leaves that are not tensors (ints, floats, strings, arrays) carry no grad


# ---------------------------------------------------------------------------
# layers


@dataclass
class LinearParams:
    weight: Tensor  # [in, out]
    bias: Tensor    # [out]


def linear_init(rng: np.random.Generator, n_in: int, n_out: int,
                dtype=np.float64) -> LinearParams:
    """Xavier-uniform weight, zero bias."""
    bound = math.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)
    b = np.zeros(n_out, dtype=dtype)
    return LinearParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def linear(x, p: LinearParams) -> Tensor:
    return ad.add(ad.matmul(x, p.weight), p.bias)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


def layer_norm_init(dim: int, dtype=np.float64) -> LayerNormParams:
    return LayerNormParams(Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
                           Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))


def layer_norm(x, p: LayerNormParams) -> Tensor:
    return ad.layer_norm(x, p.gamma, p.beta)


@dataclass
class AttentionParams:
    """Multi-head attention projections, no biases.

    wq/wk/wv are [C, C] with per-head blocks stacked along the output axis;
    wo mixes heads back to C.
    """
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    num_heads: int = 8


def attention_init(rng: np.random.Generator, dim: int, num_heads: int = 8,
                   dtype=np.float64) -> AttentionParams:
    if dim % num_heads != 0:
        raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
    def proj():
        bound = math.sqrt(6.0 / (dim + dim))
        return Tensor(rng.uniform(-bound, bound, size=(dim, dim)).astype(dtype),
                      requires_grad=True)
    return AttentionParams(proj(), proj(), proj(), proj(), num_heads)


def multihead_attention(query, key, value, p: AttentionParams) -> Tensor:
    """Scaled dot-product attention over sets: (N, C) inputs, (N, C) output."""
    n = query.shape[0]
    dim = p.wq.shape[0]
    h = p.num_heads
    dk = dim // h

    def split(x):
        # (N, C) -> (H, N, dk)
        return ad.transpose(ad.reshape(x, (x.shape[0], h, dk)), (1, 0, 2))

    q = split(ad.matmul(query, p.wq))
    k = split(ad.matmul(key, p.wk))
    v = split(ad.matmul(value, p.wv))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    mixed = ad.matmul(attn, v)                       # (H, N, dk)
    mixed = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (n, dim))
    return ad.matmul(mixed, p.wo)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


def adam_init(named_params) -> AdamState:
    m = {name: np.zeros_like(t.data) for name, t in named_params}
    v = {name: np.zeros_like(arr) for name, arr in m.items()}
    return AdamState(0, m, v)


def global_grad_norm(named_params) -> float:
    total = 0.0
    for _, t in named_params:
        if t.grad is not None:
            flat = np.ascontiguousarray(t.grad).ravel()
            total += float(np.dot(flat, flat))
    return math.sqrt(total)


def adam_step(named_params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 1e-4, max_grad_norm: float = 1.0) -> float:
    """One Adam update with decoupled weight decay and global-norm clipping.

    Returns the pre-clip gradient norm. If any gradient is non-finite the
    step is rejected (parameters and moments untouched) and the caller sees
    the non-finite norm.
    """
    params = list(named_params)
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        return norm
    scale = 1.0
    if max_grad_norm > 0 and norm > max_grad_norm:
        scale = max_grad_norm / (norm + 1e-12)
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params:
        if p.grad is None:
            continue
        # works in place on p.grad and one scratch buffer; the gradient is
        # owned by this step (zeroed every iteration) so mutation is safe
        g = p.grad
        if scale != 1.0:
            np.multiply(g, scale, out=g)
        m = state.m[name]
        v = state.v[name]
        scratch = np.square(g)
        scratch *= 1.0 - beta2
        v *= beta2
        v += scratch
        m *= beta1
        g *= 1.0 - beta1
        m += g
        np.multiply(v, 1.0 / bc2, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += eps
        np.divide(m, scratch, out=g)
        g *= lr / bc1
        if weight_decay > 0:
            p.data *= 1.0 - lr * weight_decay
        p.data -= g
    return norm


def zero_grads(named_params) -> None:
    for _, t in named_params:
        t.grad = None
