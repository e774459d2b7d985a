"""Coarsened graph attention pooling.

Regions are grouped into local clusters; one local attention unit per cluster
produces one column of the assignment matrix ``S``. Features and adjacency are
coarsened with ``S`` and transformed, and the process repeats until a single
global node remains.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class LayerPartition:
    membership: np.ndarray  # node -> cluster id
    n_clusters: int
    centroids: np.ndarray | None = None  # n_clusters x 2

    @property
    def n_nodes(self) -> int:
        return len(self.membership)

    def onehot(self) -> np.ndarray:
        """n_nodes x n_clusters membership matrix."""
        m = np.zeros((self.n_nodes, self.n_clusters))
        m[np.arange(self.n_nodes), self.membership] = 1.0
        return m

    def clusters(self) -> list[list[int]]:
        return [np.flatnonzero(self.membership == c).tolist() for c in range(self.n_clusters)]


def _neighbours(adjacency: np.ndarray) -> list[np.ndarray]:
    a = np.asarray(adjacency) != 0
    np.fill_diagonal(a, False)
    return [np.flatnonzero(row) for row in a]


def _centroids(coords, membership, k):
    if coords is None:
        return None
    out = np.zeros((k, coords.shape[1]))
    np.add.at(out, membership, coords)
    return out / np.bincount(membership, minlength=k)[:, None]


def partition_graph(adjacency: np.ndarray, mu: int, coords: np.ndarray | None = None) -> LayerPartition:
    """Greedy BFS partition into clusters of at most ``mu`` nodes.

    Unassigned nodes seed clusters in id order; each cluster grows by BFS until
    it holds ``mu`` nodes or its frontier runs dry. Among the neighbours of the
    node being expanded, those nearest the cluster's current centroid join
    first (ties and missing coordinates fall back to node id).

    If the graph has no edges at all and ``mu >= 2``, BFS could not merge
    anything, so clusters are filled with the spatially nearest (or lowest-id)
    unassigned nodes instead.
    """
    n = adjacency.shape[0]
    if mu < 1:
        raise ValueError("mu must be >= 1")
    coords = None if coords is None else np.asarray(coords, dtype=np.float64)
    nbrs = _neighbours(adjacency)
    membership = np.full(n, -1, dtype=np.int64)
    edgeless = all(len(x) == 0 for x in nbrs)
    k = 0
    for seed in range(n):
        if membership[seed] >= 0:
            continue
        members = [seed]
        membership[seed] = k
        if edgeless and mu > 1:
            rest = np.flatnonzero(membership < 0)
            if coords is not None:
                d = np.linalg.norm(coords[rest] - coords[seed], axis=1)
                rest = rest[np.lexsort((rest, d))]
            for v in rest[: mu - 1]:
                membership[v] = k
                members.append(int(v))
        else:
            queue = deque([seed])
            while queue and len(members) < mu:
                u = queue.popleft()
                cand = [v for v in nbrs[u] if membership[v] < 0]
                if coords is not None and cand:
                    centre = coords[members].mean(axis=0)
                    cand.sort(key=lambda v: (float(np.linalg.norm(coords[v] - centre)), int(v)))
                for v in cand:
                    if len(members) >= mu:
                        break
                    membership[v] = k
                    members.append(int(v))
                    queue.append(v)
        k += 1
    return LayerPartition(membership, k, _centroids(coords, membership, k))


def coarsen_pattern(adjacency: np.ndarray, partition: LayerPartition) -> np.ndarray:
    """Structural (0/1, zero-diagonal) adjacency of the coarsened graph."""
    m = partition.onehot()
    b = (np.asarray(adjacency) != 0).astype(np.float64)
    out = (m.T @ b @ m > 0).astype(np.float64)
    np.fill_diagonal(out, 0.0)
    return out


def build_partitions(adjacency: np.ndarray, mu: int, coords: np.ndarray | None = None) -> list[LayerPartition]:
    """Partition layer after layer until a single node remains.

    Partitions depend only on graph structure: strictly positive in-cluster
    attention weights give the coarsened adjacency the same sparsity pattern
    as the membership product, so the hierarchy is fixed before training.
    """
    if mu < 2:
        raise ValueError("mu must be >= 2 for the hierarchy to terminate")
    layers = []
    pattern = np.asarray(adjacency)
    while pattern.shape[0] > 1:
        part = partition_graph(pattern, mu, coords)
        if part.n_clusters >= part.n_nodes:
            raise RuntimeError("partition failed to coarsen the graph")
        layers.append(part)
        pattern = coarsen_pattern(pattern, part)
        coords = part.centroids
    return layers


@dataclass
class PoolingLayerParams:
    att_proj: Tensor  # d x d
    att_vec: Tensor  # d x 1
    weight: Tensor  # d x d
    bias: Tensor  # 1 x d
    alpha: float = 1.0
    linear: Tensor | None = None  # d x d, linear-pooling ablation only


def attention_scores(z: Tensor, p: PoolingLayerParams) -> Tensor:
    """score_u = a^T tanh(W_s^T z_u), as an n x 1 column."""
    return z.matmul(p.att_proj).tanh().matmul(p.att_vec)


def assignment_matrix(z: Tensor, partition: LayerPartition, p: PoolingLayerParams) -> Tensor:
    """Masked assignment S (n_l x n_{l+1}); each column is a softmax over its cluster."""
    if z.shape[0] != partition.n_nodes:
        raise ValueError(f"{z.shape[0]} embeddings for {partition.n_nodes} partitioned nodes")
    scores = attention_scores(z, p)
    logits = scores.T.tile_rows(partition.n_clusters)
    return logits.row_softmax(mask=partition.onehot().T.astype(bool)).T


def uniform_assignment(partition: LayerPartition) -> np.ndarray:
    m = partition.onehot()
    return m / m.sum(axis=0, keepdims=True)


def pool_features(z: Tensor, s: Tensor, alpha: float) -> Tensor:
    """X = alpha * S^T Z."""
    return s.T.matmul(z).scale(alpha)


def pool_adjacency(a: Tensor, s: Tensor, alpha: float) -> Tensor:
    """A' = alpha * S^T A S."""
    return s.T.matmul(a).matmul(s).scale(alpha)


def transform(a_next: Tensor, x: Tensor, p: PoolingLayerParams) -> Tensor:
    """Z' = ReLU(A' X W + b)."""
    return a_next.matmul(x).matmul(p.weight).add(p.bias.tile_rows(x.shape[0])).relu()


def coarsen_step(z: Tensor, a: Tensor, partition: LayerPartition, p: PoolingLayerParams, pooling: str = "attention"):
    """One pooling layer; returns ``(Z_next, A_next, S)``.

    ``pooling="linear"`` swaps the attention units for uniform in-cluster
    averaging followed by the learnable ``p.linear`` map.
    """
    if pooling == "attention":
        s = assignment_matrix(z, partition, p)
        x = pool_features(z, s, p.alpha)
    elif pooling == "linear":
        if p.linear is None:
            raise ValueError("linear pooling needs a 'linear' weight")
        s = z.tape.const(uniform_assignment(partition))
        x = linear_pooling(z, partition, p)
    else:
        raise ValueError(f"unknown pooling mode {pooling!r}")
    a_next = pool_adjacency(a, s, p.alpha)
    return transform(a_next, x, p), a_next, s


def linear_pooling(z: Tensor, partition: LayerPartition, p: PoolingLayerParams) -> Tensor:
    s = z.tape.const(uniform_assignment(partition))
    return pool_features(z, s, p.alpha).matmul(p.linear)


@dataclass
class PoolingHierarchy:
    partitions: list[LayerPartition]
    assignments: list[Tensor] = field(default_factory=list)
    adjacencies: list[Tensor] = field(default_factory=list)  # A^0 .. A^L
    embeddings: list[Tensor] = field(default_factory=list)  # Z^0 .. Z^L
    global_feature: Tensor | None = None

    @property
    def sizes(self) -> list[int]:
        return [e.shape[0] for e in self.embeddings]


def extract_global_feature(
    z: Tensor,
    adjacency: np.ndarray,
    params: list[PoolingLayerParams],
    mu: int | None = None,
    *,
    partitions: list[LayerPartition] | None = None,
    coords: np.ndarray | None = None,
    pooling: str = "attention",
) -> PoolingHierarchy:
    """Pool ``z`` layer by layer down to one node.

    Pass either ``mu`` (partitions are built here) or precomputed
    ``partitions``; with both, ``partitions`` wins.
    """
    if partitions is None:
        if mu is None:
            raise ValueError("need mu or partitions")
        partitions = build_partitions(adjacency, mu, coords)
    if len(params) < len(partitions):
        raise ValueError(f"{len(params)} pooling parameter sets for {len(partitions)} layers")
    a = z.tape.const(adjacency)
    h = PoolingHierarchy(list(partitions), adjacencies=[a], embeddings=[z])
    for part, p in zip(partitions, params):
        z, a, s = coarsen_step(z, a, part, p, pooling)
        h.assignments.append(s)
        h.adjacencies.append(a)
        h.embeddings.append(z)
    if z.shape[0] != 1:
        raise ValueError(f"hierarchy ended with {z.shape[0]} nodes, expected 1")
    h.global_feature = z
    return h
