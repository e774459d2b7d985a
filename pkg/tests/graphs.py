"""Exhaustive small-graph enumeration and a per-unit pooling oracle for tests."""
from functools import lru_cache

import networkx as nx
import numpy as np

from cgap.autodiff import Tape
from cgap.pooling import PoolingLayerParams, assignment_matrix, pool_adjacency, pool_features


@lru_cache(maxsize=None)
def connected_graphs(max_nodes: int) -> tuple[np.ndarray, ...]:
    """One adjacency matrix per isomorphism class of connected graphs on 1..max_nodes nodes.

    The atlas covers up to 7 nodes; 8-node classes come from adding a vertex to
    every 7-node graph and deduplicating by isomorphism.
    """
    out = [g for g in nx.graph_atlas_g() if 0 < g.number_of_nodes() <= min(max_nodes, 7) and nx.is_connected(g)]
    if max_nodes >= 8:
        buckets: dict[str, list] = {}
        for g in (g for g in nx.graph_atlas_g() if g.number_of_nodes() == 7):
            for mask in range(1, 128):
                h = g.copy()
                h.add_edges_from((7, v) for v in range(7) if mask >> v & 1)
                if not nx.is_connected(h):
                    continue
                bucket = buckets.setdefault(nx.weisfeiler_lehman_graph_hash(h, iterations=3), [])
                if not any(nx.is_isomorphic(h, o) for o in bucket):
                    bucket.append(h)
        out += [h for b in buckets.values() for h in b]
    return tuple(nx.to_numpy_array(g, nodelist=sorted(g.nodes)) for g in out)


def random_layer_params(d: int, rng, tape: Tape) -> PoolingLayerParams:
    return PoolingLayerParams(
        att_proj=tape.const(rng.normal(size=(d, d))),
        att_vec=tape.const(rng.normal(size=(d, 1))),
        weight=tape.const(rng.normal(size=(d, d))),
        bias=tape.const(rng.normal(size=(1, d))),
        alpha=float(rng.uniform(0.5, 2.0)),
    )


def per_unit_columns(z: np.ndarray, partition, p: PoolingLayerParams) -> list[np.ndarray]:
    """S_i for every unit: an n x k matrix holding only unit i's masked softmax column."""
    scores = np.tanh(z @ p.att_proj.value) @ p.att_vec.value
    n, k = partition.n_nodes, partition.n_clusters
    units = []
    for c, members in enumerate(partition.clusters()):
        e = np.exp(scores[members, 0] - scores[members, 0].max())
        s_i = np.zeros((n, k))
        s_i[members, c] = e / e.sum()
        units.append(s_i)
    return units


def split_units(s: np.ndarray) -> list[np.ndarray]:
    """Per-unit S_i: S with every column but i zeroed (each unit owns one column)."""
    units = []
    for c in range(s.shape[1]):
        s_i = np.zeros_like(s)
        s_i[:, c] = s[:, c]
        units.append(s_i)
    return units


def pooling_oracle_gap(a: np.ndarray, z: np.ndarray, partition, p: PoolingLayerParams):
    """Max gaps (S columns, X, A', asymmetry of A') between per-unit oracles and the masked products.

    S is checked against independently computed per-unit softmax columns; X and
    A' are then recomputed as sums over units from the implementation's own S,
    so those two gaps isolate the sum-of-units identity.
    """
    t = p.att_proj.tape
    s = assignment_matrix(t.const(z), partition, p)
    alpha = p.alpha
    s_gap = np.abs(s.value - sum(per_unit_columns(z, partition, p))).max()
    units = split_units(s.value)
    x_oracle = alpha * sum(s_i.T @ z for s_i in units)
    # A' = alpha S^T A S expanded over unit pairs (supports are disjoint)
    a_oracle = alpha * sum(s_i.T @ a @ s_j for s_i in units for s_j in units)
    x = pool_features(t.const(z), s, alpha).value
    a_next = pool_adjacency(t.const(a), s, alpha).value
    return s_gap, np.abs(x - x_oracle).max(), np.abs(a_next - a_oracle).max(), np.abs(a_next - a_next.T).max()
