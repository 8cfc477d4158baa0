"""Core data containers shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PointCloud:
    """Anchor points of a vector field, with per-point condition/trial labels."""

    points: np.ndarray  # (n, d)
    condition_id: np.ndarray  # (n,) int
    trial_id: np.ndarray  # (n,) int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be a 2D array")
        n, d = self.points.shape
        if n < 2:
            raise ValueError("point cloud needs at least 2 points")
        if d < 1:
            raise ValueError("point dimension must be >= 1")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain non-finite values")
        self.condition_id = np.asarray(self.condition_id, dtype=int)
        self.trial_id = np.asarray(self.trial_id, dtype=int)
        if self.condition_id.shape != (n,) or self.trial_id.shape != (n,):
            raise ValueError("label arrays must have one entry per point")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def select(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(self.points[idx], self.condition_id[idx], self.trial_id[idx])


@dataclass
class VectorFieldSample:
    """One vector per anchor point; the unit of analysis for a condition."""

    base: PointCloud
    vectors: np.ndarray  # (n, d)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.shape != self.base.points.shape:
            raise ValueError("vectors must match base points in shape")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("vectors contain non-finite values")

    @property
    def n(self) -> int:
        return self.base.n

    def select(self, idx) -> "VectorFieldSample":
        idx = np.asarray(idx)
        return VectorFieldSample(self.base.select(idx), self.vectors[idx])


@dataclass
class TrajectoryEnsemble:
    """Set of state-space trajectories at uniform time step dt."""

    trials: list  # list of (T_i, d) arrays
    condition: list  # condition label per trial
    dt: float
    extras: dict = field(default_factory=dict)  # e.g. readouts, input masks

    def __post_init__(self):
        self.trials = [np.asarray(t, dtype=float) for t in self.trials]
        for t in self.trials:
            if t.ndim != 2 or t.shape[0] < 2:
                raise ValueError("each trial needs at least 2 time points")
            if not np.all(np.isfinite(t)):
                raise ValueError("trial contains non-finite states")
        if len(self.condition) != len(self.trials):
            raise ValueError("one condition label per trial required")

    @property
    def dim(self) -> int:
        return self.trials[0].shape[1]


@dataclass
class LatentDistribution:
    """Per-node latent embeddings partitioned by condition."""

    z: np.ndarray  # (n_total, E)
    condition_id: np.ndarray  # (n_total,)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.condition_id = np.asarray(self.condition_id, dtype=int)
        if self.z.shape[0] != self.condition_id.shape[0]:
            raise ValueError("condition labels must match embedding rows")

    @property
    def conditions(self) -> np.ndarray:
        return np.unique(self.condition_id)

    def per_condition(self, c) -> np.ndarray:
        return self.z[self.condition_id == c]
