"""Urban region graph data: containers, CSV bundle I/O, synthetic cities."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FILES = ("regions.csv", "edges.csv", "mobility.csv", "poi.csv", "labels.csv")


class DataError(ValueError):
    """Invalid dataset content, with the offending file and line when known."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        where = ""
        if file is not None:
            where = f"{file}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)


@dataclass(eq=False)
class UrbanRegionGraph:
    adjacency: np.ndarray  # n x n, {0,1}, symmetric, zero diagonal
    poi_counts: np.ndarray  # n, int
    mobility: np.ndarray  # n x n, int trip counts
    coords: np.ndarray  # n x 2
    region_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.region_ids is None:
            self.region_ids = tuple(str(i) for i in range(n))
        validate_graph(self)

    @property
    def n_regions(self) -> int:
        return self.adjacency.shape[0]

    def __eq__(self, other):
        if not isinstance(other, UrbanRegionGraph):
            return NotImplemented
        return (
            self.region_ids == other.region_ids
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.poi_counts, other.poi_counts)
            and np.array_equal(self.mobility, other.mobility)
            and np.array_equal(self.coords, other.coords)
        )


@dataclass(eq=False)
class DownstreamLabels:
    crime: np.ndarray
    checkin: np.ndarray
    landuse: np.ndarray  # int category ids, contiguous from 0

    def __eq__(self, other):
        if not isinstance(other, DownstreamLabels):
            return NotImplemented
        return (
            np.array_equal(self.crime, other.crime)
            and np.array_equal(self.checkin, other.checkin)
            and np.array_equal(self.landuse, other.landuse)
        )


def validate_graph(g: UrbanRegionGraph) -> None:
    n = g.adjacency.shape[0]
    if n < 1:
        raise DataError("graph needs at least one region")
    if g.adjacency.shape != (n, n) or g.mobility.shape != (n, n):
        raise DataError("adjacency and mobility must both be n x n")
    if g.poi_counts.shape != (n,) or g.coords.shape != (n, 2) or len(g.region_ids) != n:
        raise DataError("per-region arrays must have length n")
    if not np.array_equal(g.adjacency, g.adjacency.T):
        raise DataError("adjacency is not symmetric")
    if np.any(np.diag(g.adjacency) != 0):
        raise DataError("adjacency has self-loops")
    if not np.isin(g.adjacency, (0, 1)).all():
        raise DataError("adjacency must be binary")
    if np.any(g.mobility < 0):
        raise DataError("negative mobility count")
    if np.any(g.poi_counts < 0):
        raise DataError("negative POI count")


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric GCN normalization D^-1/2 (N + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


# -- CSV bundle ----------------------------------------------------------------


def _read_rows(path: Path, header: list[str]):
    if not path.is_file():
        raise DataError("missing file", path.name)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError("empty file, expected header " + ",".join(header), path.name, 1)
        if first != header:
            raise DataError(f"bad header {first}, expected {header}", path.name, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path.name, lineno)
            yield lineno, row


def _parse(value: str, kind, file: str, line: int, what: str):
    try:
        v = kind(value)
    except ValueError:
        raise DataError(f"bad {what} {value!r}", file, line)
    if kind is float and not math.isfinite(v):
        raise DataError(f"non-finite {what}", file, line)
    return v


def load_city_dataset(directory) -> tuple[UrbanRegionGraph, DownstreamLabels]:
    d = Path(directory)
    ids: dict[str, int] = {}
    coords = []
    for line, (rid, x, y) in _read_rows(d / "regions.csv", ["region_id", "x", "y"]):
        if rid in ids:
            raise DataError(f"duplicate region id {rid!r}", "regions.csv", line)
        ids[rid] = len(ids)
        coords.append((_parse(x, float, "regions.csv", line, "x"), _parse(y, float, "regions.csv", line, "y")))
    n = len(ids)
    if n == 0:
        raise DataError("no regions", "regions.csv")

    def lookup(rid, file, line):
        if rid not in ids:
            raise DataError(f"unknown region {rid!r}", file, line)
        return ids[rid]

    adj = np.zeros((n, n), dtype=np.int64)
    for line, (s, t) in _read_rows(d / "edges.csv", ["src", "dst"]):
        i, j = lookup(s, "edges.csv", line), lookup(t, "edges.csv", line)
        if i == j:
            raise DataError("self-loop edge", "edges.csv", line)
        if adj[i, j]:
            raise DataError("duplicate edge", "edges.csv", line)
        adj[i, j] = adj[j, i] = 1

    mob = np.zeros((n, n), dtype=np.int64)
    seen = set()
    for line, (s, t, c) in _read_rows(d / "mobility.csv", ["src", "dst", "count"]):
        i, j = lookup(s, "mobility.csv", line), lookup(t, "mobility.csv", line)
        c = _parse(c, int, "mobility.csv", line, "count")
        if c < 0:
            raise DataError("negative count", "mobility.csv", line)
        if (i, j) in seen:
            raise DataError("duplicate mobility pair", "mobility.csv", line)
        seen.add((i, j))
        mob[i, j] = c

    poi = np.full(n, -1, dtype=np.int64)
    for line, (rid, c) in _read_rows(d / "poi.csv", ["region_id", "count"]):
        i = lookup(rid, "poi.csv", line)
        c = _parse(c, int, "poi.csv", line, "count")
        if c < 0:
            raise DataError("negative count", "poi.csv", line)
        if poi[i] >= 0:
            raise DataError(f"duplicate region {rid!r}", "poi.csv", line)
        poi[i] = c
    if np.any(poi < 0):
        raise DataError("regions without POI count", "poi.csv")

    crime = np.full(n, np.nan)
    checkin = np.full(n, np.nan)
    landuse = np.full(n, -1, dtype=np.int64)
    for line, (rid, cr, ch, lu) in _read_rows(d / "labels.csv", ["region_id", "crime", "checkin", "landuse"]):
        i = lookup(rid, "labels.csv", line)
        if landuse[i] >= 0:
            raise DataError(f"duplicate region {rid!r}", "labels.csv", line)
        crime[i] = _parse(cr, float, "labels.csv", line, "crime")
        checkin[i] = _parse(ch, float, "labels.csv", line, "checkin")
        landuse[i] = _parse(lu, int, "labels.csv", line, "landuse")
        if crime[i] < 0 or checkin[i] < 0 or landuse[i] < 0:
            raise DataError("negative label", "labels.csv", line)
    if np.any(landuse < 0):
        raise DataError("regions without labels", "labels.csv")
    if set(np.unique(landuse)) != set(range(landuse.max() + 1)):
        raise DataError("landuse ids must be contiguous from 0", "labels.csv")

    coords = np.array(coords, dtype=np.float64)
    connect_isolated(adj, coords)
    graph = UrbanRegionGraph(adj, poi, mob, coords, tuple(ids))
    return graph, DownstreamLabels(crime, checkin, landuse)


def connect_isolated(adj: np.ndarray, coords: np.ndarray) -> list[tuple[int, int]]:
    """Give every degree-0 region one edge to its nearest region (in place); returns the added pairs."""
    added = []
    if len(adj) < 2:
        return added
    for i in np.flatnonzero(adj.sum(axis=1) == 0):
        dist = np.linalg.norm(coords - coords[i], axis=1)
        dist[i] = np.inf
        j = int(np.argmin(dist))
        adj[i, j] = adj[j, i] = 1
        added.append((int(i), j))
    if added:
        log.warning("connected %d isolated region(s) to their nearest neighbour", len(added))
    return added


def save_city_dataset(directory, graph: UrbanRegionGraph, labels: DownstreamLabels) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = graph.region_ids
    n = graph.n_regions
    tables = {
        "regions.csv": (["region_id", "x", "y"],
                        [(ids[i], repr(float(graph.coords[i, 0])), repr(float(graph.coords[i, 1]))) for i in range(n)]),
        "edges.csv": (["src", "dst"],
                      [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n) if graph.adjacency[i, j]]),
        "mobility.csv": (["src", "dst", "count"],
                         [(ids[i], ids[j], int(graph.mobility[i, j]))
                          for i in range(n) for j in range(n) if graph.mobility[i, j]]),
        "poi.csv": (["region_id", "count"], [(ids[i], int(graph.poi_counts[i])) for i in range(n)]),
        "labels.csv": (["region_id", "crime", "checkin", "landuse"],
                       [(ids[i], repr(float(labels.crime[i])), repr(float(labels.checkin[i])), int(labels.landuse[i]))
                        for i in range(n)]),
    }
    paths = []
    for name, (header, rows) in tables.items():
        path = d / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths.append(path)
    return paths


def dataset_hash(directory) -> str:
    h = hashlib.sha256()
    for name in FILES:
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()


# -- synthetic cities -----------------------------------------------------------


def _knn_adjacency(coords: np.ndarray, k: int) -> np.ndarray:
    n = len(coords)
    adj = np.zeros((n, n), dtype=np.int64)
    if n == 1:
        return adj
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    for i in range(n):
        for j in np.argsort(dist[i], kind="stable")[: min(k, n - 1)]:
            adj[i, j] = adj[j, i] = 1
    return adj


def generate_synthetic_city(
    n_regions: int,
    n_communities: int,
    seed: int,
    k_neighbors: int = 4,
    tau: float = 2.0,
    intra_boost: float = 8.0,
    poi_mean_range: tuple[float, float] = (8.0, 20.0),
) -> tuple[UrbanRegionGraph, DownstreamLabels]:
    """Deterministic synthetic city with planted community structure.

    Regions sit on a jittered grid and are linked to their ``k_neighbors``
    nearest neighbours. Communities are the Voronoi cells of randomly chosen
    seed regions. Trips follow a gravity model on POI counts with an
    ``intra_boost`` multiplier between regions of the same community. Crime
    depends mostly on community and outflow, check-in mostly on POI count;
    land use is the community id.
    """
    if n_regions < 1 or n_communities < 1:
        raise ValueError("need at least one region and one community")
    if n_communities > n_regions:
        raise ValueError(f"n_communities ({n_communities}) > n_regions ({n_regions})")
    rng = np.random.default_rng(seed)
    n = n_regions

    side = math.ceil(math.sqrt(n))
    grid = np.array([(i % side, i // side) for i in range(n)], dtype=np.float64)
    coords = grid + rng.uniform(-0.3, 0.3, size=(n, 2))

    # Voronoi cells around randomly chosen seed regions; each seed is its own
    # nearest seed, so every community is non-empty
    seeds = rng.choice(n, size=n_communities, replace=False)
    to_seed = np.linalg.norm(coords[:, None, :] - coords[seeds][None, :, :], axis=-1)
    community = to_seed.argmin(axis=1)
    community[seeds] = np.arange(n_communities)

    adj = _knn_adjacency(coords, k_neighbors)

    lo, hi = poi_mean_range
    poi_means = np.linspace(lo, hi, n_communities) if n_communities > 1 else np.array([(lo + hi) / 2])
    poi_means = rng.permutation(poi_means)
    # floor of 1 keeps every gravity row positive
    poi = np.maximum(rng.poisson(poi_means[community]), 1).astype(np.int64)

    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    same = community[:, None] == community[None, :]
    gravity = np.outer(poi, poi) * np.exp(-dist / tau) * np.where(same, intra_boost, 1.0)
    c = 200.0 / gravity.max()
    mob = np.rint(c * gravity).astype(np.int64)
    # a row rounded away entirely keeps its self-flow
    for i in np.flatnonzero(mob.sum(axis=1) == 0):
        mob[i, i] = 1

    onehot = np.eye(n_communities)[community]
    outflow = mob.sum(axis=1).astype(np.float64)
    outflow_z = (outflow - outflow.mean()) / (outflow.std() + 1e-12)
    poi_z = (poi - poi.mean()) / (poi.std() + 1e-12)
    crime_effect = rng.normal(0.0, 30.0, n_communities)
    checkin_effect = rng.normal(0.0, 20.0, n_communities)
    crime = onehot @ crime_effect + 6.0 * poi_z + 8.0 * outflow_z + rng.normal(0.0, 5.0, n)
    checkin = onehot @ checkin_effect + 25.0 * poi_z + 5.0 * outflow_z + rng.normal(0.0, 5.0, n)
    crime = crime - crime.min() + 10.0
    checkin = checkin - checkin.min() + 10.0

    graph = UrbanRegionGraph(adj, poi, mob, coords)
    labels = DownstreamLabels(crime, checkin, community.astype(np.int64))
    return graph, labels


def memory_accounting(graph: UrbanRegionGraph, mu: int, depth: int | None = None) -> dict:
    """Assignment-matrix storage of masked pooling against dense n x n assignments.

    Per layer, masked pooling stores an ``n_l x n_{l+1}`` assignment (one
    column per local unit, ``n_{l+1} ~ n_l / mu``) where a dense pooling over
    the whole graph stores ``n_l x n_l``. ``nonzero`` counts the entries that
    survive the mask (each node belongs to one unit).
    """
    from .pooling import build_partitions, partition_graph

    if mu < 1:
        raise ValueError("mu must be >= 1")
    if mu == 1:
        n = graph.n_regions
        layers = [partition_graph(graph.adjacency, 1, graph.coords)] * (depth or 1)
    else:
        layers = build_partitions(graph.adjacency, mu, graph.coords)
        if depth is not None:
            layers = layers[:depth]
    rows = []
    for l, part in enumerate(layers):
        n = part.n_nodes
        rows.append({
            "layer": l,
            "n_nodes": n,
            "n_clusters": part.n_clusters,
            "masked": n * part.n_clusters,
            "dense": n * n,
            "nonzero": n,
        })
    masked = sum(r["masked"] for r in rows)
    dense = sum(r["dense"] for r in rows)
    return {
        "n_regions": graph.n_regions,
        "mu": mu,
        "layers": rows,
        "masked_total": masked,
        "dense_total": dense,
        "ratio": masked / dense if dense else 1.0,
    }
