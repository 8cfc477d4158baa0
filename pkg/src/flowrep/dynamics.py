"""Synthetic dynamical systems: toy planar fields, Van der Pol trajectories on
a paraboloid, and low-rank RNN ensembles for the delayed-match-to-sample task."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PointCloud, TrajectoryEnsemble, VectorFieldSample


# ---------------------------------------------------------------------------
# Van der Pol oscillator


def _vdp_rhs(state, mu):
    x, y = state[..., 0], state[..., 1]
    return np.stack([y, mu * (1 - x ** 2) * y - x], axis=-1)


def simulate_vanderpol(mu: float, n_traj: int, T: float, dt: float,
                       init_box: float = 3.0, init_annulus: tuple | None = None,
                       seed: int = 0, condition: int = 0) -> TrajectoryEnsemble:
    """RK4 integration of xdot = y, ydot = mu (1 - x^2) y - x from random starts.

    Starts are uniform in [-init_box, init_box]^2, or uniform in radius and
    angle over the annulus (r_lo, r_hi) when init_annulus is given.
    """
    if dt <= 0 or T <= dt:
        raise ValueError("need dt > 0 and T > dt")
    rng = np.random.default_rng(seed)
    n_steps = int(round(T / dt))
    if init_annulus is not None:
        r_lo, r_hi = init_annulus
        if not 0 <= r_lo < r_hi:
            raise ValueError("need 0 <= r_lo < r_hi")
        r = rng.uniform(r_lo, r_hi, size=n_traj)
        theta = rng.uniform(0, 2 * np.pi, size=n_traj)
        state = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    else:
        state = rng.uniform(-init_box, init_box, size=(n_traj, 2))
    traj = np.empty((n_steps + 1, n_traj, 2))
    traj[0] = state
    for t in range(n_steps):
        k1 = _vdp_rhs(state, mu)
        k2 = _vdp_rhs(state + 0.5 * dt * k1, mu)
        k3 = _vdp_rhs(state + 0.5 * dt * k2, mu)
        k4 = _vdp_rhs(state + dt * k3, mu)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            bad = np.where(~np.isfinite(state).all(axis=1))[0][0]
            raise RuntimeError(f"non-finite state at mu={mu}, trial {bad}")
        traj[t + 1] = state
    trials = [traj[:, i] for i in range(n_traj)]
    return TrajectoryEnsemble(trials=trials, condition=[condition] * n_traj, dt=dt)


def lift_to_paraboloid(traj: TrajectoryEnsemble, alpha: float) -> TrajectoryEnsemble:
    """Map 2D states (x, y) to (x, y, -(a x)^2 - (a y)^2)."""
    if traj.dim != 2:
        raise ValueError("input trajectories must be 2D")
    lifted = []
    for t in traj.trials:
        z = -(alpha * t[:, 0]) ** 2 - (alpha * t[:, 1]) ** 2
        lifted.append(np.column_stack([t, z]))
    return TrajectoryEnsemble(trials=lifted, condition=list(traj.condition),
                              dt=traj.dt, extras=dict(traj.extras))


def parab(x, y, alpha):
    return -(alpha * x) ** 2 - (alpha * y) ** 2


# ---------------------------------------------------------------------------
# Low-rank RNN


@dataclass
class RNNSpec:
    m: np.ndarray  # (N, R) left connectivity loadings
    n: np.ndarray  # (N, R) right connectivity loadings
    w_in: np.ndarray  # (N, 2) input weights
    w_out: np.ndarray  # (N,) readout weights
    tau: float = 100.0  # ms
    noise_std: float = 3e-2

    def __post_init__(self):
        N, R = self.m.shape
        if N < 1 or R < 1 or self.n.shape != (N, R) or self.w_in.shape != (N, 2):
            raise ValueError("inconsistent loading-vector shapes")

    @property
    def N(self) -> int:
        return self.m.shape[0]

    @property
    def rank(self) -> int:
        return self.m.shape[1]

    def connectivity(self) -> np.ndarray:
        return self.m @ self.n.T / self.N


@dataclass
class GaussianRNNStats:
    """Per-unit joint Gaussian statistics for the loading vectors.

    Units are drawn iid as [m_1..m_R, n_1..n_R, w_in1, w_in2, w_out] from a
    mixture of Gaussians (cluster means / shared covariance / weights).
    """

    R: int
    means: np.ndarray  # (n_clusters, 2R+3)
    cov: np.ndarray  # (2R+3, 2R+3)
    weights: np.ndarray  # (n_clusters,)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.cov = np.asarray(self.cov, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        dim = 2 * self.R + 3
        if self.means.shape[1] != dim or self.cov.shape != (dim, dim):
            raise ValueError("statistics dimensions inconsistent with rank")
        evals = np.linalg.eigvalsh((self.cov + self.cov.T) / 2)
        if evals.min() < -1e-10:
            raise ValueError("covariance is not positive semidefinite")


def default_rnn_stats(R: int = 2, connectivity_gain: float = 2.2,
                      input_overlap: float = 1.0,
                      input_mean: float = 1.2) -> GaussianRNNStats:
    """Illustrative two-cluster statistics: each cluster specialises in one
    input channel, with connectivity loadings correlated so that n_r tracks
    m_r (self-excitation) and the active input channel."""
    dim = 2 * R + 3
    # order: m_1..m_R, n_1..n_R, w_in1, w_in2, w_out
    cov = np.eye(dim) * 0.25
    for r in range(R):
        cov[r, r] = 1.0  # m_r variance
        cov[R + r, R + r] = connectivity_gain ** 2 * 1.0 + 0.25
        cov[r, R + r] = cov[R + r, r] = connectivity_gain  # n_r ~ gain * m_r
    cov[2 * R, 2 * R] = 0.3 ** 2
    cov[2 * R + 1, 2 * R + 1] = 0.3 ** 2
    cov[2 * R + 2, 2 * R + 2] = 1.0
    # couple each input channel to one connectivity mode so stimulation
    # pushes the state along the recurrent plane; 0.1 < sqrt(0.25 * 0.09)
    # keeps the joint covariance positive definite
    cov[R + 0, 2 * R] = cov[2 * R, R + 0] = input_overlap * 0.1
    if R > 1:
        cov[R + 1, 2 * R + 1] = cov[2 * R + 1, R + 1] = input_overlap * 0.1
    mean_a = np.zeros(dim)
    mean_a[2 * R] = input_mean
    mean_b = np.zeros(dim)
    mean_b[2 * R + 1] = input_mean
    return GaussianRNNStats(R=R, means=np.stack([mean_a, mean_b]), cov=cov,
                            weights=np.array([0.5, 0.5]))


def sample_gaussian_lowrank_rnn(N: int, stats: GaussianRNNStats,
                                seed: int = 0, tau: float = 100.0,
                                noise_std: float = 3e-2) -> RNNSpec:
    """Draw a low-rank RNN whose per-unit loadings follow `stats`."""
    rng = np.random.default_rng(seed)
    R = stats.R
    w = stats.weights / stats.weights.sum()
    cluster = rng.choice(len(w), size=N, p=w)
    L = np.linalg.cholesky(stats.cov + 1e-12 * np.eye(stats.cov.shape[0]))
    draws = stats.means[cluster] + rng.standard_normal((N, stats.cov.shape[0])) @ L.T
    return RNNSpec(m=draws[:, :R], n=draws[:, R:2 * R],
                   w_in=draws[:, 2 * R:2 * R + 2], w_out=draws[:, 2 * R + 2],
                   tau=tau, noise_std=noise_std)


@dataclass
class DMTSProtocol:
    """Epoch durations (ms) for the delayed-match-to-sample protocol."""

    fixation_range: tuple = (100.0, 500.0)
    stimulation: float = 500.0
    delay_range: tuple = (500.0, 3000.0)
    decision: float = 1000.0

    def __post_init__(self):
        vals = [*self.fixation_range, self.stimulation, *self.delay_range,
                self.decision]
        if any(v < 0 for v in vals):
            raise ValueError("durations must be nonnegative")


def dmts_inputs(protocol: DMTSProtocol, gain: float, dt: float, seed: int = 0):
    """Piecewise-constant (T, 2) input series plus a boolean stimulation mask.

    Channel 1 carries the stimulus at amplitude `gain` during the two 500 ms
    stimulation epochs; epoch durations are drawn uniformly and rounded to the
    dt grid.
    """
    rng = np.random.default_rng(seed)
    fix = rng.uniform(*protocol.fixation_range)
    delay = rng.uniform(*protocol.delay_range)
    durs = [fix, protocol.stimulation, delay, protocol.stimulation,
            protocol.decision]
    steps = [int(round(d / dt)) for d in durs]
    T = sum(steps)
    u = np.zeros((T, 2))
    mask = np.zeros(T, dtype=bool)
    s0 = steps[0]
    mask[s0:s0 + steps[1]] = True
    s2 = s0 + steps[1] + steps[2]
    mask[s2:s2 + steps[3]] = True
    u[mask, 0] = gain
    return u, mask


def simulate_rnn(spec: RNNSpec, inputs: np.ndarray, dt: float,
                 seed: int = 0, condition: int = 0) -> TrajectoryEnsemble:
    """Euler-Maruyama integration of tau dx/dt = -x + J phi(x) + u + eta.

    `inputs` is (T, 2) sampled at dt; returns the unit trajectory and the
    readout o(t) in extras.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    T = inputs.shape[0]
    N = spec.N
    x = np.zeros(N)
    out = np.empty((T + 1, N))
    out[0] = x
    readout = np.empty(T + 1)
    readout[0] = spec.w_out @ np.tanh(x)
    a = dt / spec.tau
    sig = spec.noise_std * np.sqrt(a)
    for t in range(T):
        phi = np.tanh(x)
        u_t = spec.w_in @ inputs[t]
        drive = spec.m @ (spec.n.T @ phi) / N + u_t
        x = x + a * (-x + drive) + sig * rng.standard_normal(N)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite RNN state at step {t}")
        out[t + 1] = x
        readout[t + 1] = spec.w_out @ np.tanh(x)
    return TrajectoryEnsemble(trials=[out], condition=[condition], dt=dt,
                              extras={"readout": [readout]})


def simulate_rnn_trials(spec: RNNSpec, protocol: DMTSProtocol, gain: float,
                        n_trials: int, dt: float, seed: int = 0,
                        condition: int = 0) -> TrajectoryEnsemble:
    """Independent DMTS trials; per-trial RNG streams derived from the seed."""
    trials, readouts, masks = [], [], []
    for tr in range(n_trials):
        u, mask = dmts_inputs(protocol, gain, dt, seed=seed * 100003 + tr)
        ens = simulate_rnn(spec, u, dt, seed=seed * 900007 + tr)
        trials.append(ens.trials[0])
        readouts.append(ens.extras["readout"][0])
        masks.append(np.concatenate([[False], mask]))
    return TrajectoryEnsemble(trials=trials, condition=[condition] * n_trials,
                              dt=dt, extras={"readout": readouts,
                                             "stim_mask": masks})


# ---------------------------------------------------------------------------
# Toy planar fields

TOY_FIELD_KINDS = ("constant-left", "constant-right", "vortex-cw", "vortex-ccw",
                   "linear", "saddle", "parabola-gradient")


def toy_fields(kind: str, n: int, seed: int = 0,
               condition: int = 0) -> VectorFieldSample:
    """Analytic planar field sampled at n uniform points in [-1, 1]^2."""
    if kind not in TOY_FIELD_KINDS:
        raise ValueError(f"unknown field kind: {kind}")
    if n < 10:
        raise ValueError("need n >= 10")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    x, y = X[:, 0], X[:, 1]
    if kind == "constant-left":
        F = np.tile([-1.0, 0.0], (n, 1))
    elif kind == "constant-right":
        F = np.tile([1.0, 0.0], (n, 1))
    elif kind == "vortex-cw":
        # amplitude 0.5 keeps vortex speeds below the unit speed of the
        # constant fields everywhere on [-1, 1]^2, so the field families
        # remain distinguishable by rotation-invariant features
        F = 0.5 * np.column_stack([y, -x])
    elif kind == "vortex-ccw":
        F = 0.5 * np.column_stack([-y, x])
    elif kind == "linear":
        F = np.column_stack([x, y])
    elif kind == "saddle":
        F = np.column_stack([x, -y])
    else:  # parabola-gradient: gradient of x^2 + y^2
        F = np.column_stack([2 * x, 2 * y])
    cloud = PointCloud(points=X, condition_id=np.full(n, condition),
                       trial_id=np.zeros(n, dtype=int))
    return VectorFieldSample(base=cloud, vectors=F)


def vectors_from_trajectories(traj: TrajectoryEnsemble,
                              keep_mask: list | None = None) -> VectorFieldSample:
    """First-order forward differences anchored at each point but the last.

    `keep_mask` optionally restricts which time points of each trial are kept
    (evaluated at the anchor index, after dropping the final point).
    """
    pts, vecs, conds, trials = [], [], [], []
    for ti, (t, c) in enumerate(zip(traj.trials, traj.condition)):
        if t.shape[0] < 2:
            raise ValueError(f"trial {ti} has fewer than 2 points")
        anchors = t[:-1]
        diffs = t[1:] - t[:-1]
        if keep_mask is not None:
            mask = np.asarray(keep_mask[ti])[: len(anchors)]
            anchors, diffs = anchors[mask], diffs[mask]
        pts.append(anchors)
        vecs.append(diffs)
        conds.append(np.full(len(anchors), c))
        trials.append(np.full(len(anchors), ti))
    cloud = PointCloud(points=np.vstack(pts),
                       condition_id=np.concatenate(conds),
                       trial_id=np.concatenate(trials))
    return VectorFieldSample(base=cloud, vectors=np.vstack(vecs))
