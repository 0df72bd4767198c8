"""Proposal-feature interaction: per-proposal dynamic mixing of RoI features,
the self-attention interaction block run per context view, and the fusion
step that merges the object and background streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .nn import AttentionParams, LayerNormParams, LinearParams


@dataclass
class DIIParams:
    """Dynamic interaction: a proposal vector generates the two mixing mats."""

    gen: LinearParams   # C -> 2*C*D
    norm_d: LayerNormParams
    norm_c: LayerNormParams
    out: LinearParams   # S^2*C -> C
    channels: int = 256
    hidden: int = 64
    grid: int = 7


def dii_init(rng: np.random.Generator, channels: int = 256, hidden: int = 64,
             grid: int = 7, dtype=np.float64) -> DIIParams:
    return DIIParams(
        gen=nn.linear_init(rng, channels, 2 * channels * hidden, dtype),
        norm_d=nn.layer_norm_init(hidden, dtype),
        norm_c=nn.layer_norm_init(channels, dtype),
        out=nn.linear_init(rng, grid * grid * channels, channels, dtype),
        channels=channels, hidden=hidden, grid=grid)


def dynamic_instance_interaction(p: Tensor, f: Tensor, params: DIIParams) -> Tensor:
    """Mix RoI features with weights generated from each proposal's vector.

    p: (N, C) proposal features; f: (N, S^2, C) pooled features. Each
    proposal i yields P1 (C, D) and P2 (D, C) from one linear layer; the RoI
    grid is passed through both with norm+ReLU between, then flattened into
    a single C-vector. Zeroing the generator makes the output proposal-
    independent (the mixing collapses to a constant).
    """
    n, c, d = p.shape[0], params.channels, params.hidden
    s2 = params.grid * params.grid
    if p.shape[1] != c or f.shape[1] != s2 or f.shape[2] != c:
        raise ValueError(f"shape mismatch: p={p.shape}, f={f.shape}, "
                         f"expected (N,{c}) and (N,{s2},{c})")
    gen = nn.linear(p, params.gen)                      # (N, 2*C*D)
    p1 = ad.reshape(gen[:, :c * d], (n, c, d))
    p2 = ad.reshape(gen[:, c * d:], (n, d, c))
    f1 = ad.relu(nn.layer_norm(ad.matmul(f, p1), params.norm_d))   # (N, S^2, D)
    f2 = ad.relu(nn.layer_norm(ad.matmul(f1, p2), params.norm_c))  # (N, S^2, C)
    return nn.linear(ad.reshape(f2, (n, s2 * c)), params.out)


@dataclass
class InteractionHeadParams:
    self_attn: AttentionParams
    norm_attn: LayerNormParams
    dii: DIIParams
    ffn_a: LinearParams
    norm_a: LayerNormParams
    ffn_b: LinearParams
    norm_b: LayerNormParams
    dropout: float = 0.0


def interaction_head_init(rng: np.random.Generator, channels: int = 256,
                          hidden: int = 64, grid: int = 7, heads: int = 8,
                          dropout: float = 0.0, dtype=np.float64) -> InteractionHeadParams:
    return InteractionHeadParams(
        self_attn=nn.attention_init(rng, channels, heads, dtype),
        norm_attn=nn.layer_norm_init(channels, dtype),
        dii=dii_init(rng, channels, hidden, grid, dtype),
        ffn_a=nn.linear_init(rng, channels, channels, dtype),
        norm_a=nn.layer_norm_init(channels, dtype),
        ffn_b=nn.linear_init(rng, channels, channels, dtype),
        norm_b=nn.layer_norm_init(channels, dtype),
        dropout=dropout)


def _maybe_dropout(x: Tensor, rate: float, mode: str,
                   rng: np.random.Generator | None) -> Tensor:
    if mode != "train" or rate <= 0.0 or rng is None:
        return x
    mask = rng.random(x.shape) >= rate
    return ad.dropout(x, rate, mask)


def interaction_head_forward(pro: Tensor, roi: Tensor,
                             params: InteractionHeadParams,
                             mode: str = "eval",
                             rng: np.random.Generator | None = None):
    """One context stream: self-attention over proposals, dynamic mixing
    with that stream's RoI features, then a two-layer refinement.

    Returns (features, updated_pro): `features` is what the pipeline carries
    to the next stage and hands to fusion; `updated_pro` is the post-
    attention proposal state.
    """
    att = nn.multihead_attention(pro, pro, pro, params.self_attn)
    att = _maybe_dropout(att, params.dropout, mode, rng)
    pro2 = nn.layer_norm(ad.add(pro, att), params.norm_attn)
    x = dynamic_instance_interaction(pro2, roi, params.dii)
    h = ad.relu(nn.layer_norm(nn.linear(x, params.ffn_a), params.norm_a))
    feats = nn.layer_norm(nn.linear(h, params.ffn_b), params.norm_b)
    return feats, pro2


@dataclass
class FusionParams:
    variant: str = "xattn"   # xattn | add | mul
    attn: AttentionParams | None = None
    norm: LayerNormParams | None = None
    dropout: float = 0.0
    # cross-attention builds K from the object stream (queries and keys from
    # the same side); set True for the conventional K-from-values layout
    key_from_values: bool = False


def fusion_init(rng: np.random.Generator, channels: int = 256, heads: int = 8,
                variant: str = "xattn", dropout: float = 0.0,
                key_from_values: bool = False, dtype=np.float64) -> FusionParams:
    if variant not in ("xattn", "add", "mul"):
        raise ValueError(f"unknown fusion variant: {variant}")
    if variant != "xattn":
        return FusionParams(variant=variant)
    return FusionParams(variant="xattn",
                        attn=nn.attention_init(rng, channels, heads, dtype),
                        norm=nn.layer_norm_init(channels, dtype),
                        dropout=dropout,
                        key_from_values=key_from_values)


def fusion_head_forward(f_obj: Tensor, f_bg: Tensor, params: FusionParams,
                        mode: str = "eval",
                        rng: np.random.Generator | None = None) -> Tensor:
    """Merge the two streams into the feature used by the output layers."""
    if f_obj.shape != f_bg.shape:
        raise ValueError(f"stream shapes differ: {f_obj.shape} vs {f_bg.shape}")
    if params.variant == "add":
        return ad.add(f_obj, f_bg)
    if params.variant == "mul":
        return ad.mul(f_obj, f_bg)
    keys = f_bg if params.key_from_values else f_obj
    att = nn.multihead_attention(f_obj, keys, f_bg, params.attn)
    att = _maybe_dropout(att, params.dropout, mode, rng)
    return nn.layer_norm(att, params.norm)
