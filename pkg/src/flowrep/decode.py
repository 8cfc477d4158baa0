"""Auxiliary analysis recipes: rate estimation, PCA, linear and kNN decoding,
and Procrustes consistency between embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import orthogonal_procrustes


def gaussian_rate(events: np.ndarray, sigma_ms: float, bin_ms: float,
                  span: tuple) -> tuple:
    """Gaussian-kernel rate estimate on a bin grid, in events per second.

    `events` are sorted event times in seconds; `span` = (t0, t1) seconds.
    Returns (bin_centers, rates).
    """
    if sigma_ms <= 0 or bin_ms <= 0:
        raise ValueError("sigma and bin width must be positive")
    t0, t1 = span
    if t1 <= t0:
        raise ValueError("empty span")
    sigma = sigma_ms / 1000.0
    width = bin_ms / 1000.0
    centers = np.arange(t0 + width / 2, t1, width)
    events = np.asarray(events, dtype=float)
    if events.size == 0:
        return centers, np.zeros_like(centers)
    diff = centers[:, None] - events[None, :]
    rates = np.exp(-0.5 * (diff / sigma) ** 2).sum(1) / (sigma * np.sqrt(2 * np.pi))
    return centers, rates


def pca_reduce(X: np.ndarray, n_components: int):
    """Mean-centered SVD projection.

    Returns (scores, components, explained_variance_ratio).
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n_components > min(n, d):
        raise ValueError("n_components too large")
    mu = X.mean(0)
    Xc = X - mu
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2 / max(n - 1, 1)
    ratio = var / max(var.sum(), 1e-300)
    scores = U[:, :n_components] * s[:n_components]
    return scores, Vt[:n_components], ratio[:n_components]


@dataclass
class LinearDecoder:
    W: np.ndarray  # (E, out_dim)
    intercept: np.ndarray  # (out_dim,)

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) @ self.W + self.intercept


def _ols(Z, Y, ridge=0.0):
    n = Z.shape[0]
    X = np.column_stack([Z, np.ones(n)])
    gram = X.T @ X
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    try:
        beta = np.linalg.solve(gram, X.T @ Y)
    except np.linalg.LinAlgError:
        beta = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), X.T @ Y)
    return beta[:-1], beta[-1]


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - SS_res/SS_tot per dimension, then averaged; 0 for constant targets."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float).T).T
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float).T).T
    ss_tot = ((y_true - y_true.mean(0)) ** 2).sum(0)
    ss_res = ((y_true - y_pred) ** 2).sum(0)
    out = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0), 0.0)
    return float(out.mean())


def fit_linear_decoder(Z: np.ndarray, targets: np.ndarray, folds: int = 10,
                       shuffle: bool = False, seed: int = 0):
    """OLS with intercept per fold; returns (decoder, fold R2 scores, mean R2).

    Folds are contiguous sample blocks by default; `shuffle` randomises the
    fold assignment (seeded), which matters when samples are ordered by the
    target. Rank-deficient designs fall back to ridge with lambda = 1e-8.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, E = Z.shape
    if n <= E:
        raise ValueError("need more samples than embedding dimensions")
    ridge = 0.0
    if np.linalg.matrix_rank(np.column_stack([Z, np.ones(n)])) < E + 1:
        ridge = 1e-8
    idx = np.arange(n)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(n)
    fold_sizes = np.full(folds, n // folds)
    fold_sizes[: n % folds] += 1
    scores = []
    stop = 0
    for fs in fold_sizes:
        test = idx[stop:stop + fs]
        train = np.concatenate([idx[:stop], idx[stop + fs:]])
        stop += fs
        W, b = _ols(Z[train], Y[train], ridge)
        scores.append(r_squared(Y[test], Z[test] @ W + b))
    W, b = _ols(Z, Y, ridge)
    return LinearDecoder(W=W, intercept=b), np.array(scores), float(np.mean(scores))


def knn_decode(Z_train: np.ndarray, y_train: np.ndarray, Z_test: np.ndarray,
               k: int, y_test: np.ndarray | None = None):
    """Mean of the k nearest training targets under cosine distance.

    Returns (predictions, mae) where mae is None without y_test.
    """
    Z_train = np.asarray(Z_train, dtype=float)
    Z_test = np.asarray(Z_test, dtype=float)
    if k > len(Z_train):
        raise ValueError("k exceeds the training set size")
    for name, Z in (("train", Z_train), ("test", Z_test)):
        if np.any(np.linalg.norm(Z, axis=1) == 0):
            raise ValueError(f"zero-norm embedding row in {name} set")
    y_train = np.asarray(y_train, dtype=float)
    a = Z_test / np.linalg.norm(Z_test, axis=1, keepdims=True)
    b = Z_train / np.linalg.norm(Z_train, axis=1, keepdims=True)
    dist = 1.0 - a @ b.T
    nn = np.argsort(dist, axis=1)[:, :k]
    preds = y_train[nn].mean(axis=1)
    mae = None
    if y_test is not None:
        mae = float(np.abs(preds - np.asarray(y_test, dtype=float)).mean())
    return preds, mae


def procrustes_consistency(Z_source: np.ndarray, Z_target: np.ndarray) -> float:
    """R2 of the target regressed on the Procrustes-aligned (rotation + scale)
    source embedding."""
    A = np.asarray(Z_source, dtype=float)
    B = np.asarray(Z_target, dtype=float)
    if A.shape != B.shape:
        raise ValueError("embeddings must share shape")
    if A.shape[0] < A.shape[1]:
        raise ValueError("need at least as many rows as dimensions")
    Ac = A - A.mean(0)
    Bc = B - B.mean(0)
    R, s = orthogonal_procrustes(Ac, Bc)
    norm = (Ac ** 2).sum()
    scale = s / max(norm, 1e-300)
    aligned = scale * Ac @ R
    W, b = _ols(aligned, Bc)
    return r_squared(Bc, aligned @ W + b)
