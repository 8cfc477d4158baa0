"""Proximity-graph approximation of the data manifold.

Builds homogeneous graphs from point clouds via farthest point subsampling
and the continuous k-nearest-neighbour (ck-NN) rule, and answers hop-distance
neighbourhood queries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .data import PointCloud

_DIAM_SAMPLE_CAP = 5000  # exact max pairwise distance up to this size


@dataclass
class ProximityGraph:
    """ck-NN graph over a (possibly subsampled) point cloud.

    Directed edges are stored in both orientations: edge e runs src[e] -> dst[e]
    with edge vector x_dst - x_src.
    """

    n: int
    src: np.ndarray  # (2E,) directed edge sources
    dst: np.ndarray  # (2E,) directed edge targets
    edge_vectors: np.ndarray  # (2E, d)
    node_ids: np.ndarray | None = None  # indices into the original cloud
    _neighbors: list = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(self.src == self.dst):
            raise ValueError("self-loops are not allowed")
        order = np.lexsort((self.dst, self.src))
        self.src = self.src[order]
        self.dst = self.dst[order]
        self.edge_vectors = self.edge_vectors[order]
        self._neighbors = [[] for _ in range(self.n)]
        for s, t in zip(self.src, self.dst):
            self._neighbors[s].append(t)
        self.degrees = np.array([len(nb) for nb in self._neighbors])
        if np.any(self.degrees < 1):
            raise ValueError("graph has isolated vertices")

    @property
    def num_directed_edges(self) -> int:
        return len(self.src)

    def neighbors(self, i) -> np.ndarray:
        return np.array(self._neighbors[i])

    def adjacency(self) -> csr_matrix:
        data = np.ones(len(self.src))
        return csr_matrix((data, (self.src, self.dst)), shape=(self.n, self.n))

    def edge_index(self) -> dict:
        """Map (src, dst) -> position in the directed edge arrays."""
        return {(s, t): e for e, (s, t) in enumerate(zip(self.src, self.dst))}


def cloud_diameter(points: np.ndarray, rng: np.random.Generator | None = None) -> float:
    """Max pairwise Euclidean distance; random 5000-point subset above the cap."""
    pts = np.asarray(points, dtype=float)
    if len(pts) > _DIAM_SAMPLE_CAP:
        rng = rng or np.random.default_rng(0)
        pts = pts[rng.choice(len(pts), _DIAM_SAMPLE_CAP, replace=False)]
    d = cdist(pts, pts)
    return float(d.max())


def farthest_point_subsample(cloud: PointCloud, delta: float, seed: int = 0) -> np.ndarray:
    """Greedy subsample keeping points at pairwise spacing >= delta * diam.

    `seed` is the index of the first retained point. delta = 0 keeps everything.
    """
    if cloud is None or cloud.n == 0:
        raise ValueError("empty input")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must be in [0, 1]")
    pts = cloud.points
    n = pts.shape[0]
    if delta == 0.0:
        return np.arange(n)
    threshold = delta * cloud_diameter(pts)
    chosen = [int(seed)]
    mind = np.linalg.norm(pts - pts[seed], axis=1)
    while True:
        cand = int(np.argmax(mind))
        if mind[cand] < threshold:
            break
        chosen.append(cand)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[cand], axis=1))
    return np.array(sorted(chosen))


def build_cknn_graph(cloud: PointCloud, k: int, delta: float,
                     keep_largest_component: bool = True) -> ProximityGraph:
    """Continuous k-NN graph: connect i, j when

        ||x_i - x_j||^2 < delta * ||x_i - x_u|| * ||x_j - x_v||

    with u, v the k-th nearest neighbours of i, j. The rule is symmetric.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = cloud.points
    n = pts.shape[0]
    if k >= n:
        raise ValueError("k too large")
    if delta <= 0:
        raise ValueError("delta must be positive")
    dist = cdist(pts, pts)
    # k-th nearest neighbour distance (excluding self)
    dk = np.sort(dist, axis=1)[:, k]
    bound = delta * np.outer(dk, dk)
    # non-strict at ties so that a uniform grid at delta = 1 keeps its lattice edges
    adj = dist ** 2 <= bound
    np.fill_diagonal(adj, False)
    adj |= adj.T  # already symmetric in exact arithmetic; be safe

    if keep_largest_component:
        ncomp, labels = connected_components(csr_matrix(adj), directed=False)
        if ncomp > 1:
            warnings.warn(
                f"ck-NN graph has {ncomp} components; keeping the largest",
                stacklevel=2,
            )
            sizes = np.bincount(labels)
            keep = labels == np.argmax(sizes)
            idx = np.where(keep)[0]
            sub = cloud.select(idx)
            g = build_cknn_graph(sub, min(k, sub.n - 1), delta,
                                 keep_largest_component=True)
            g.node_ids = idx if g.node_ids is None else idx[g.node_ids]
            return g

    src, dst = np.where(adj)
    if len(src) == 0 or np.any(adj.sum(1) == 0):
        raise ValueError("graph has isolated vertices; increase delta or k")
    edge_vectors = pts[dst] - pts[src]
    return ProximityGraph(n=n, src=src, dst=dst, edge_vectors=edge_vectors,
                          node_ids=np.arange(n))


def geodesic_neighborhood(graph: ProximityGraph, i: int, p: int) -> set:
    """All nodes within hop distance p of node i (BFS)."""
    if not 0 <= i < graph.n:
        raise ValueError("node out of range")
    seen = {i}
    frontier = [i]
    for _ in range(p):
        nxt = []
        for u in frontier:
            for v in graph._neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return seen


def hop_distances(graph: ProximityGraph, i: int, max_hops: int | None = None) -> np.ndarray:
    """BFS hop distance from i to every node (-1 if unreachable/beyond cap)."""
    dist = np.full(graph.n, -1, dtype=int)
    dist[i] = 0
    frontier = [i]
    h = 0
    while frontier and (max_hops is None or h < max_hops):
        h += 1
        nxt = []
        for u in frontier:
            for v in graph._neighbors[u]:
                if dist[v] < 0:
                    dist[v] = h
                    nxt.append(v)
        frontier = nxt
    return dist
