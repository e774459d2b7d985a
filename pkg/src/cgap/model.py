"""Full CGAP forward pass: encode, pool, fuse, decode, losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import GlobalAttentionParams, fuse_global
from .autodiff import Tape, Tensor
from .config import TrainingConfig
from .data import UrbanRegionGraph, normalize_adjacency
from .encoder import encode_regions, uniform_init
from .objectives import (
    decode_heads,
    mobility_distribution,
    mobility_loss,
    poi_loss,
    predicted_distribution,
    region_embedding_loss,
    total_loss,
)
from .pooling import LayerPartition, PoolingHierarchy, PoolingLayerParams, build_partitions, extract_global_feature


@dataclass
class GraphContext:
    """Everything about the graph the forward pass needs, computed once."""

    n: int
    adjacency: np.ndarray
    a_norm: np.ndarray
    partitions: list[LayerPartition]
    mobility_pr: np.ndarray
    poi_counts: np.ndarray

    @classmethod
    def build(cls, graph: UrbanRegionGraph, mu: int) -> GraphContext:
        adj = graph.adjacency.astype(np.float64)
        return cls(
            n=graph.n_regions,
            adjacency=adj,
            a_norm=normalize_adjacency(adj),
            partitions=build_partitions(adj, mu, graph.coords),
            mobility_pr=mobility_distribution(graph.mobility),
            poi_counts=graph.poi_counts.astype(np.float64),
        )


def uses_pooling(config: TrainingConfig) -> bool:
    return config.attention_mode != "no_global"


def init_params(ctx: GraphContext, config: TrainingConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights uniform(-sqrt(1/d), sqrt(1/d)), biases zero, in a fixed name order."""
    d, n = config.dim, ctx.n
    p = {"features": uniform_init((n, d), d, rng)}
    for k in range(config.gcn_layers):
        p[f"gcn.{k}.weight"] = uniform_init((d, d), d, rng)
    if uses_pooling(config):
        for l in range(len(ctx.partitions)):
            if config.pooling == "attention":
                p[f"pool.{l}.att_proj"] = uniform_init((d, d), d, rng)
                p[f"pool.{l}.att_vec"] = uniform_init((d, 1), d, rng)
            else:
                p[f"pool.{l}.linear"] = uniform_init((d, d), d, rng)
            p[f"pool.{l}.weight"] = uniform_init((d, d), d, rng)
            p[f"pool.{l}.bias"] = np.zeros((1, d))
        for name in ("key", "query", "value"):
            p[f"attn.{name}"] = uniform_init((d, d), d, rng)
    p["decoder.mob.weight"] = uniform_init((d, n), d, rng)
    p["decoder.mob.bias"] = np.zeros((1, n))
    p["decoder.poi.weight"] = uniform_init((d, d), d, rng)
    p["decoder.poi.bias"] = np.zeros((1, d))
    return p


@dataclass
class ForwardPass:
    tape: Tape
    z: Tensor
    hierarchy: PoolingHierarchy | None
    e_hat: Tensor
    l_r: Tensor
    l_mob: Tensor
    l_poi: Tensor
    loss: Tensor

    def breakdown(self, beta: float):
        return total_loss(self.l_r.value[0, 0], self.l_mob.value[0, 0], self.l_poi.value[0, 0], beta)


def forward(ctx: GraphContext, params: dict[str, np.ndarray], config: TrainingConfig,
            training: bool = False, rng: np.random.Generator | None = None) -> ForwardPass:
    tape = Tape()
    t = {name: tape.param(name, value) for name, value in params.items()}
    a_norm = tape.const(ctx.a_norm)
    gcn = [t[f"gcn.{k}.weight"] for k in range(config.gcn_layers)]
    z = encode_regions(a_norm, t["features"], gcn, config.dropout, training, rng)

    hierarchy = None
    if uses_pooling(config):
        layers = []
        for l in range(len(ctx.partitions)):
            layers.append(PoolingLayerParams(
                att_proj=t.get(f"pool.{l}.att_proj"),
                att_vec=t.get(f"pool.{l}.att_vec"),
                weight=t[f"pool.{l}.weight"],
                bias=t[f"pool.{l}.bias"],
                alpha=config.alpha_for(l),
                linear=t.get(f"pool.{l}.linear"),
            ))
        hierarchy = extract_global_feature(z, ctx.adjacency, layers, partitions=ctx.partitions,
                                           pooling=config.pooling)
        attn = GlobalAttentionParams(t["attn.key"], t["attn.query"], t["attn.value"])
        e_hat = fuse_global(z, hierarchy.global_feature, attn, config.attention_mode)
    else:
        e_hat = z

    l_r = region_embedding_loss(e_hat, z)
    m_logits, p_hat = decode_heads(e_hat, t["decoder.mob.weight"], t["decoder.mob.bias"],
                                   t["decoder.poi.weight"], t["decoder.poi.bias"])
    zero = tape.const(0.0)
    l_mob = mobility_loss(ctx.mobility_pr, predicted_distribution(m_logits)) if config.data_mode != "poi_only" else zero
    l_poi = poi_loss(ctx.poi_counts, p_hat) if config.data_mode != "mobility_only" else zero
    loss = total_loss(l_r, l_mob, l_poi, config.beta)
    return ForwardPass(tape, z, hierarchy, e_hat, l_r, l_mob, l_poi, loss)
