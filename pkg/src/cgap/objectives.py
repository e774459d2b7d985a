"""Training objectives: region embedding loss, mobility and POI losses, total."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

POI_EPS = 0.5


@dataclass(frozen=True)
class LossBreakdown:
    l_r: float
    l_mob: float
    l_poi: float
    l_total: float
    beta: float

    def as_dict(self):
        return {"l_r": self.l_r, "l_mob": self.l_mob, "l_poi": self.l_poi, "l_total": self.l_total}


def region_embedding_loss(e_hat: Tensor, z: Tensor) -> Tensor:
    """sum_i exp(-||e_i - z_i||_2)."""
    if e_hat.shape != z.shape:
        raise ValueError(f"shape mismatch {e_hat.shape} vs {z.shape}")
    dist = e_hat.sqdiff(z).sum(axis=1).sqrt()
    return dist.scale(-1.0).exp().sum()


def decode_heads(e_hat: Tensor, w_m: Tensor, b_m: Tensor, w_p: Tensor, b_p: Tensor):
    """Affine mobility logits (n x n) and POI embeddings (n x d)."""
    n = e_hat.shape[0]
    m_logits = e_hat.matmul(w_m).add(b_m.tile_rows(n))
    p_hat = e_hat.matmul(w_p).add(b_p.tile_rows(n))
    return m_logits, p_hat


def mobility_distribution(m: np.ndarray) -> np.ndarray:
    """Row-normalized trip counts Pr(j|i)."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    totals = m.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        bad = np.flatnonzero(totals[:, 0] <= 0).tolist()
        raise ValueError(f"regions {bad} have no outgoing trips; the dataset should be validated first")
    return m / totals


def predicted_distribution(m_logits: Tensor) -> Tensor:
    """exp(logits) normalized per row, i.e. a row softmax."""
    return m_logits.row_softmax()


def mobility_loss(pr: np.ndarray, pr_hat: Tensor) -> Tensor:
    """Cross entropy sum_i sum_j -Pr(j|i) log(Pr_hat(j|i)); zero-probability terms drop out."""
    if pr.shape != pr_hat.shape:
        raise ValueError(f"shape mismatch {pr.shape} vs {pr_hat.shape}")
    return pr_hat.log().mul(pr).sum().scale(-1.0)


def poi_ratio_matrix(poi_counts) -> np.ndarray:
    p = np.asarray(poi_counts, dtype=np.float64)
    p = np.where(p > 0, p, POI_EPS)
    return p[:, None] / p[None, :]


def poi_loss(poi_counts, p_hat: Tensor) -> Tensor:
    """sum_ij (p_i / p_j - p_hat_i . p_hat_j)^2."""
    ratios = poi_ratio_matrix(poi_counts)
    return p_hat.matmul(p_hat.T).sqdiff(ratios).sum()


def total_loss(l_r, l_mob, l_poi, beta: float):
    """beta * l_r + (1 - beta) * (l_mob + l_poi); accepts floats or tensors."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if isinstance(l_r, Tensor):
        return l_r.scale(beta).add(l_mob.add(l_poi).scale(1.0 - beta))
    total = beta * l_r + (1.0 - beta) * (l_mob + l_poi)
    return LossBreakdown(float(l_r), float(l_mob), float(l_poi), float(total), beta)
