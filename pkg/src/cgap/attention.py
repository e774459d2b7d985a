"""Global attention fusion of the pooled global feature with region embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .autodiff import Tensor

MODES = ("literal", "gated", "no_global")


@dataclass
class GlobalAttentionParams:
    key: Tensor
    query: Tensor
    value: Tensor


def attention_weights(k: Tensor, q: Tensor) -> Tensor:
    if k.shape != q.shape:
        raise ValueError(f"key/query shapes differ: {k.shape} vs {q.shape}")
    return q.matmul(k.T).scale(1.0 / math.sqrt(q.shape[1])).row_softmax()


def scaled_dot_attention(k: Tensor, q: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V."""
    if v.shape != k.shape:
        raise ValueError(f"value shape {v.shape} differs from key shape {k.shape}")
    return attention_weights(k, q).matmul(v)


def fuse_global(z: Tensor, h_g: Tensor | None, params: GlobalAttentionParams | None, mode: str = "gated") -> Tensor:
    """Final region representation.

    literal
        Keys are ``h_g`` tiled over every region, so every attention row is the
        same softmax of identical scores: all output rows equal the mean of
        ``Z W_v``.
    gated
        One key ``k = h_g W_k``; regions compete for it through a softmax over
        ``q_i . k / sqrt(d)`` and region ``i`` gets ``v_i + n * a_i * k``.
    no_global
        Returns ``z`` unchanged.
    """
    if mode == "no_global":
        return z
    if mode not in MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    n, d = z.shape
    q = z.matmul(params.query)
    v = z.matmul(params.value)
    if mode == "literal":
        k = h_g.tile_rows(n).matmul(params.key)
        return scaled_dot_attention(k, q, v)
    k = h_g.matmul(params.key)
    a = q.matmul(k.T).scale(1.0 / math.sqrt(d)).T.row_softmax().T
    return v.add(a.matmul(k).scale(float(n)))
