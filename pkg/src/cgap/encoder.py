"""GCN region encoder: Z = GNN(A, F)."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def uniform_init(shape, d: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(1.0 / d)
    return rng.uniform(-bound, bound, size=shape)


def init_node_features(n_regions: int, d: int, seed) -> np.ndarray:
    """Random initial node features, i.i.d. uniform(-sqrt(1/d), sqrt(1/d))."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return uniform_init((n_regions, d), d, rng)


def gcn_layer_forward(a_norm: Tensor, h: Tensor, w: Tensor, dropout: float = 0.0, rng=None) -> Tensor:
    """ReLU(A_norm H W), with inverted dropout on the output when ``dropout > 0``."""
    out = a_norm.matmul(h).matmul(w).relu()
    if dropout > 0.0:
        out = out.dropout(dropout, rng)
    return out


def encode_regions(a_norm: Tensor, features: Tensor, weights: list[Tensor],
                   dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    h = features
    for w in weights:
        h = gcn_layer_forward(a_norm, h, w, dropout if training else 0.0, rng)
    return h
