"""Tangent projection, vector diffusion and anisotropic gradient filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .data import VectorFieldSample
from .geometry import ConnectionLaplacian, ConnectionSet, TangentFrameSet
from .graph import ProximityGraph


def channel_count(m: int, p: int) -> int:
    """Number of vectorial channels after order-p derivative features."""
    return int(sum(m ** k for k in range(p + 1)))


def project_to_tangent(field: VectorFieldSample, frames: TangentFrameSet) -> np.ndarray:
    """Project ambient vectors into local frame coordinates: f'_i = T_i^T f_i."""
    if frames.n != field.n:
        raise ValueError("frames must be defined for all nodes")
    return np.einsum("ndm,nd->nm", frames.frames, field.vectors)


def vector_diffusion(signal: np.ndarray, L: ConnectionLaplacian, tau: float,
                     k_eig: int | None = None) -> np.ndarray:
    """Smooth a tangent signal by the connection heat semigroup exp(-tau L).

    Computed through the truncated spectral decomposition of the
    degree-symmetrized Laplacian. tau = 0 is the exact identity.
    """
    if not np.isfinite(tau) or tau < 0:
        raise ValueError("tau must be finite and nonnegative")
    n, m = signal.shape
    if m != L.m:
        raise ValueError("signal width does not match Laplacian block size")
    if tau == 0:
        return signal.copy()
    evals, evecs, d_half, d_invhalf = L.spectral_factors(k_eig)
    x = d_half * signal.reshape(-1)
    coeff = evecs.T @ x
    y = evecs @ (np.exp(-tau * evals) * coeff)
    return (d_invhalf * y).reshape(n, m)


@dataclass
class GradientKernels:
    """Per-edge directional-derivative weights.

    weights[e, q] = <t_src^(q), e_vec> / deg(src) for directed edge e.
    """

    weights: np.ndarray  # (2E, m)
    graph: ProximityGraph

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    def node_weights(self, i: int, q: int) -> dict:
        """Mapping neighbour j -> weight for node i, direction q."""
        mask = self.graph.src == i
        return {int(j): float(w) for j, w in
                zip(self.graph.dst[mask], self.weights[mask, q])}


def directional_derivative_kernels(graph: ProximityGraph,
                                   frames: TangentFrameSet) -> GradientKernels:
    """Decompose each frame direction onto the outgoing edge vectors."""
    deg = graph.degrees[graph.src].astype(float)
    # (2E, m): edge vector dotted with each frame direction of the source node
    w = np.einsum("ed,edm->em", graph.edge_vectors, frames.frames[graph.src])
    return GradientKernels(weights=w / deg[:, None], graph=graph)


def apply_scalar_filter(kernels: GradientKernels, s: np.ndarray, q: int) -> np.ndarray:
    """Directional derivative of a scalar field: (K^(q) s)_i = sum_j (s_j - s_i) w_ij."""
    g = kernels.graph
    contrib = (s[g.dst] - s[g.src]) * kernels.weights[:, q]
    out = np.zeros(g.n)
    np.add.at(out, g.src, contrib)
    return out


def build_filter_matrices(kernels: GradientKernels,
                          connections: ConnectionSet) -> list:
    """Sparse nm x nm operators, one per frame direction.

    B_q acts on vec(F) as sum_j w_ij^(q) (O_ij f_j - f_i): the transported
    finite-difference filter of the directional derivative.
    """
    g = kernels.graph
    m = connections.m
    n = g.n
    mats = []
    am, bm = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    for q in range(m):
        w = kernels.weights[:, q]
        # off-diagonal blocks w * O_ij at (i, j)
        rows = (g.src[:, None, None] * m + am[None]).ravel()
        cols = (g.dst[:, None, None] * m + bm[None]).ravel()
        vals = (w[:, None, None] * connections.transports).ravel()
        # diagonal blocks -sum_j w_ij * I
        wsum = np.zeros(n)
        np.add.at(wsum, g.src, w)
        drows = (np.arange(n)[:, None] * m + np.arange(m)[None]).ravel()
        dvals = np.repeat(-wsum, m)
        B = csr_matrix(
            (np.concatenate([vals, dvals]),
             (np.concatenate([rows, drows]), np.concatenate([cols, drows]))),
            shape=(n * m, n * m),
        )
        mats.append(B)
    return mats


def derivative_features(signal: np.ndarray, kernels: GradientKernels,
                        connections: ConnectionSet, p: int) -> np.ndarray:
    """Iterated gradient features, (n, m, c) with c = 1 + m + ... + m^p.

    Channel 0 is the projected signal; each order applies the m directional
    filters to every channel of the previous order and concatenates the
    component-wise gradients as new channels.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    n, m = signal.shape
    mats = build_filter_matrices(kernels, connections)
    channels = [signal]
    prev = [signal]
    for _ in range(p):
        new = []
        for v in prev:
            # grads[q] = D^(q) v, shape (n, m); new channel l is grad of component l
            grads = np.stack([(B @ v.reshape(-1)).reshape(n, m) for B in mats])
            for l in range(m):
                new.append(grads[:, :, l].T)  # (n, m): entry q = (D^(q) v)_l
        channels.extend(new)
        prev = new
    return np.stack(channels, axis=2)  # (n, m, c)
