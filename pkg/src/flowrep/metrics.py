"""Optimal-transport distances between latent distributions, plus MDS and
clustering of the resulting condition-by-condition distance matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist, squareform

from .data import LatentDistribution

EXACT_SIZE_CAP = 4_000_000  # n1*n2 above this switches to Sinkhorn


@dataclass
class TransportPlan:
    gamma: np.ndarray  # (n1, n2), nonnegative, uniform marginals

    def __post_init__(self):
        n1, n2 = self.gamma.shape
        if np.any(self.gamma < -1e-12):
            raise ValueError("transport plan has negative mass")
        if (np.abs(self.gamma.sum(1) - 1.0 / n1).max() > 1e-8
                or np.abs(self.gamma.sum(0) - 1.0 / n2).max() > 1e-8):
            raise ValueError("transport plan violates uniform marginals")


@dataclass
class DistanceMatrix:
    d: np.ndarray  # (C, C), symmetric, zero diagonal
    labels: np.ndarray  # condition labels

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if np.any(np.abs(np.diag(self.d)) > 1e-12) or np.any(self.d < -1e-12):
            raise ValueError("distance matrix must be nonnegative with zero diagonal")
        if np.abs(self.d - self.d.T).max() > 1e-10:
            raise ValueError("distance matrix must be symmetric")

    @property
    def n_conditions(self) -> int:
        return self.d.shape[0]


def _exact_ot(cost: np.ndarray):
    """Exact OT with uniform marginals: assignment for square costs, LP otherwise."""
    n1, n2 = cost.shape
    if n1 == n2:
        rows, cols = linear_sum_assignment(cost)
        gamma = np.zeros_like(cost)
        gamma[rows, cols] = 1.0 / n1
        return float(cost[rows, cols].sum() / n1), gamma
    # general uniform-marginal transport LP
    A_eq = []
    b_eq = []
    for i in range(n1):
        row = np.zeros(n1 * n2)
        row[i * n2:(i + 1) * n2] = 1
        A_eq.append(row)
        b_eq.append(1.0 / n1)
    for j in range(n2 - 1):  # last column constraint is redundant
        col = np.zeros(n1 * n2)
        col[j::n2] = 1
        A_eq.append(col)
        b_eq.append(1.0 / n2)
    res = linprog(cost.ravel(), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"OT solver failed: {res.message}")
    gamma = res.x.reshape(n1, n2)
    return float(res.fun), gamma


def sinkhorn_ot(cost: np.ndarray, epsilon: float, max_iter: int = 20000,
                tol: float = 1e-9, fail_tol: float = 1e-5):
    """Entropic OT with uniform marginals, log-domain iterations.

    Returns the transport cost <gamma, C> of the entropic plan; biased upward
    relative to the exact optimum by O(epsilon * log(n1 n2)). Iterates until
    the marginal error drops below `tol` or `max_iter` is reached; a residual
    error above `fail_tol` is treated as divergence.
    """
    n1, n2 = cost.shape
    log_a = -np.log(n1)
    log_b = -np.log(n2)
    f = np.zeros(n1)
    g = np.zeros(n2)
    K = -cost / epsilon
    for it in range(max_iter):
        M = K + (f[:, None] + g[None, :]) / epsilon
        f += epsilon * (log_a - _logsumexp(M, axis=1))
        M = K + (f[:, None] + g[None, :]) / epsilon
        g += epsilon * (log_b - _logsumexp(M, axis=0))
        M = K + (f[:, None] + g[None, :]) / epsilon
        gamma = np.exp(M)
        err = max(np.abs(gamma.sum(1) - 1.0 / n1).max(),
                  np.abs(gamma.sum(0) - 1.0 / n2).max())
        if err < tol:
            break
    else:
        if err > fail_tol:
            raise RuntimeError(
                f"Sinkhorn did not converge in {max_iter} iterations "
                f"(marginal error {err:.2e})")
    return float((gamma * cost).sum()), gamma


def _logsumexp(M, axis):
    mx = M.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def ot_distance(Z1: np.ndarray, Z2: np.ndarray, method: str = "auto"):
    """Squared-Euclidean OT distance between empirical distributions.

    Exact network solution when n1*n2 <= 4e6; entropic approximation above,
    with epsilon = 0.01 * median cost.
    """
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=float))
    if Z1.shape[1] != Z2.shape[1]:
        raise ValueError("embedding dimensions differ")
    cost = cdist(Z1, Z2, metric="sqeuclidean")
    n1, n2 = cost.shape
    if method == "exact" or (method == "auto" and n1 * n2 <= EXACT_SIZE_CAP):
        val, gamma = _exact_ot(cost)
    else:
        eps = 0.01 * max(float(np.median(cost)), 1e-12)
        val, gamma = sinkhorn_ot(cost, eps)
    return val, TransportPlan(gamma)


def distance_matrix(latent: LatentDistribution, subsample: int | None = 500,
                    seed: int = 0) -> DistanceMatrix:
    """All pairwise OT distances between per-condition latent distributions."""
    conds = latent.conditions
    if len(conds) < 2:
        raise ValueError("need at least 2 conditions")
    rng = np.random.default_rng(seed)
    clouds = []
    for c in conds:
        z = latent.per_condition(c)
        if len(z) == 0:
            raise ValueError(f"condition {c} is empty")
        if subsample is not None and len(z) > subsample:
            z = z[rng.choice(len(z), subsample, replace=False)]
        clouds.append(z)
    C = len(conds)
    D = np.zeros((C, C))
    for a in range(C):
        for b in range(a + 1, C):
            D[a, b] = D[b, a] = ot_distance(clouds[a], clouds[b])[0]
    return DistanceMatrix(d=D, labels=np.asarray(conds))


def classical_mds(D: DistanceMatrix | np.ndarray, dim: int) -> np.ndarray:
    """Classical MDS treating entries as squared dissimilarities.

    Double-center -1/2 J D J, eigendecompose, scale by sqrt of eigenvalues
    (negatives truncated at zero).
    """
    Dm = D.d if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    C = Dm.shape[0]
    if dim > C - 1:
        raise ValueError("dim must be <= C - 1")
    J = np.eye(C) - np.ones((C, C)) / C
    B = -0.5 * J @ Dm @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order][:dim], 0, None)
    evecs = evecs[:, order][:, :dim]
    return evecs * np.sqrt(evals)[None, :]


def cluster_distance_matrix(D: DistanceMatrix | np.ndarray, k: int) -> np.ndarray:
    """Average-linkage agglomerative clustering of the distance matrix, cut at k."""
    Dm = D.d if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    C = Dm.shape[0]
    if not 1 <= k <= C:
        raise ValueError("k must be in [1, C]")
    Z = linkage(squareform(Dm, checks=False), method="average")
    return fcluster(Z, t=k, criterion="maxclust")
