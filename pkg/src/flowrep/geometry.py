"""Tangent frames, parallel-transport connections and the connection Laplacian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse import linalg as spla

from .data import PointCloud
from .graph import ProximityGraph, hop_distances


@dataclass
class TangentFrameSet:
    """Per-node orthonormal frame spanning the estimated tangent space."""

    frames: np.ndarray  # (n, d, m), orthonormal columns
    manifold_dim: int

    def __post_init__(self):
        n, d, m = self.frames.shape
        if not 1 <= m <= d:
            raise ValueError("manifold dimension must satisfy 1 <= m <= d")

    @property
    def n(self) -> int:
        return self.frames.shape[0]


@dataclass
class ConnectionSet:
    """Per directed edge (i -> j) the orthogonal transport matrix.

    transports[e] is O_ij for directed edge e = (i, j) of the graph, i.e. the
    map taking frame-j coordinates into frame-i coordinates.
    """

    transports: np.ndarray  # (2E, m, m)
    graph: ProximityGraph

    @property
    def m(self) -> int:
        return self.transports.shape[1]


@dataclass
class ConnectionLaplacian:
    """Random-walk normalised block Laplacian L = I - D^-1 S.

    Off-diagonal block (i, j) is -deg(i)^-1 O_ij for j adjacent to i.
    """

    matrix: csr_matrix  # (n*m, n*m)
    degrees: np.ndarray  # (n,)
    m: int

    def symmetrized(self) -> csr_matrix:
        """D^1/2 L D^-1/2, symmetric with the same spectrum."""
        d = np.repeat(self.degrees.astype(float), self.m)
        dh = np.sqrt(d)
        n = self.matrix.shape[0]
        Dh = csr_matrix((dh, (np.arange(n), np.arange(n))), shape=(n, n))
        Dih = csr_matrix((1.0 / dh, (np.arange(n), np.arange(n))), shape=(n, n))
        S = Dh @ self.matrix @ Dih
        return (S + S.T) * 0.5

    def spectral_factors(self, k_eig: int | None = None):
        """Smallest eigenpairs of the symmetrized Laplacian plus D^±1/2 scalings.

        Returns (evals, evecs, d_half, d_invhalf) for use in the heat semigroup
        exp(-tau L) = D^-1/2 U exp(-tau Lam) U^T D^1/2.
        """
        nm = self.matrix.shape[0]
        k = min(nm, 128) if k_eig is None else min(k_eig, nm)
        Ls = self.symmetrized()
        if k >= nm - 1:
            evals, evecs = np.linalg.eigh(Ls.toarray())
            evals, evecs = evals[:k], evecs[:, :k]
        else:
            try:
                evals, evecs = spla.eigsh(Ls, k=k, sigma=-1e-2, which="LM")
            except Exception as exc:  # pragma: no cover - solver dependent
                raise RuntimeError(
                    f"spectral solve failed on {nm}x{nm} Laplacian: {exc}"
                ) from exc
        d = np.repeat(self.degrees.astype(float), self.m)
        return evals, evecs, np.sqrt(d), 1.0 / np.sqrt(d)


def _graph_nearest(cloud: PointCloud, graph: ProximityGraph, i: int, K: int) -> np.ndarray:
    """K closest nodes to i on the graph: expand hops, rank by Euclidean distance."""
    hops = 1
    while True:
        dist = hop_distances(graph, i, max_hops=hops)
        cand = np.where((dist > 0))[0]
        if len(cand) >= K or hops >= graph.n:
            break
        hops += 1
    if len(cand) < K:
        raise ValueError(f"node {i} has only {len(cand)} reachable neighbours < K={K}")
    eu = np.linalg.norm(cloud.points[cand] - cloud.points[i], axis=1)
    return cand[np.argsort(eu)[:K]]


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-magnitude entry of each column positive."""
    for q in range(U.shape[1]):
        j = np.argmax(np.abs(U[:, q]))
        if U[j, q] < 0:
            U[:, q] = -U[:, q]
    return U


def estimate_frames(cloud: PointCloud, graph: ProximityGraph, m: int,
                    K: int | None = None) -> TangentFrameSet:
    """Per-node frames from the SVD of edge vectors to the K nearest graph nodes.

    K defaults to twice the node degree, clamped to [m, n-1].
    """
    n, d = cloud.points.shape
    frames = np.empty((n, d, m))
    for i in range(n):
        Ki = 2 * graph.degrees[i] if K is None else K
        Ki = int(min(max(Ki, m), n - 1))
        nbrs = _graph_nearest(cloud, graph, i, Ki)
        E = (cloud.points[nbrs] - cloud.points[i]).T  # (d, K)
        U, s, _ = np.linalg.svd(E, full_matrices=False)
        if np.sum(s > 1e-12 * max(s[0], 1e-300)) < m:
            raise ValueError(f"degenerate neighbourhood at node {i}: rank < {m}")
        frames[i] = _fix_signs(U[:, :m])
    return TangentFrameSet(frames=frames, manifold_dim=m)


def estimate_manifold_dim(cloud: PointCloud, graph: ProximityGraph,
                          explained: float = 0.95) -> int:
    """Diagnostic: smallest m whose local singular values explain >= `explained`
    of edge-vector variance, averaged over nodes."""
    n, d = cloud.points.shape
    ratios = np.zeros(d)
    for i in range(n):
        Ki = int(min(max(2 * graph.degrees[i], 1), n - 1))
        nbrs = _graph_nearest(cloud, graph, i, Ki)
        E = (cloud.points[nbrs] - cloud.points[i]).T
        s = np.linalg.svd(E, compute_uv=False)
        s2 = np.zeros(d)
        s2[: len(s)] = s ** 2
        ratios += s2 / max(s2.sum(), 1e-300)
    ratios /= n
    cum = np.cumsum(ratios)
    return int(np.searchsorted(cum, explained) + 1)


def kabsch_connection(T_i: np.ndarray, T_j: np.ndarray) -> np.ndarray:
    """Orthogonal O_ji minimizing ||T_i - T_j O||_F over O(m).

    Reflections are permitted (no determinant correction).
    """
    U, _, Vt = np.linalg.svd(T_j.T @ T_i)
    return U @ Vt


def compute_connections(frames: TangentFrameSet, graph: ProximityGraph) -> ConnectionSet:
    """Transport matrices for every directed edge of the graph."""
    m = frames.manifold_dim
    n_edges = graph.num_directed_edges
    transports = np.empty((n_edges, m, m))
    for e, (i, j) in enumerate(zip(graph.src, graph.dst)):
        # O_ij = O_ji^T with O_ji from the Procrustes fit of frame j onto frame i
        O_ji = kabsch_connection(frames.frames[i], frames.frames[j])
        transports[e] = O_ji.T
    return ConnectionSet(transports=transports, graph=graph)


def build_connection_laplacian(graph: ProximityGraph,
                               connections: ConnectionSet) -> ConnectionLaplacian:
    """Assemble the block-sparse random-walk normalised connection Laplacian."""
    if connections.graph is not graph and connections.transports.shape[0] != graph.num_directed_edges:
        raise ValueError("connections do not cover the graph edges")
    m = connections.m
    n = graph.n
    deg = graph.degrees
    rows, cols, vals = [], [], []
    for e, (i, j) in enumerate(zip(graph.src, graph.dst)):
        block = -connections.transports[e] / deg[i]
        for a in range(m):
            for b in range(m):
                rows.append(i * m + a)
                cols.append(j * m + b)
                vals.append(block[a, b])
    off = csr_matrix((vals, (rows, cols)), shape=(n * m, n * m))
    L = identity(n * m, format="csr") + off
    return ConnectionLaplacian(matrix=L, degrees=deg, m=m)
