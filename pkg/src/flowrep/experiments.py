"""End-to-end synthetic experiments: planar toy fields, the Van der Pol
oscillator on a paraboloid, and sampled low-rank RNNs on a working-memory
protocol. Each returns a plain dict of scalars and arrays for reports.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.stats import spearmanr

from .data import TrajectoryEnsemble
from .decode import _ols, pca_reduce
from .dynamics import (DMTSProtocol, default_rnn_stats,
                       sample_gaussian_lowrank_rnn, simulate_rnn_trials,
                       simulate_vanderpol, toy_fields,
                       vectors_from_trajectories)
from .metrics import classical_mds, cluster_distance_matrix, distance_matrix
from .model import TrainConfig, prepare_condition, train

TOY_KINDS = ("constant-left", "constant-right", "vortex-cw", "vortex-ccw")


def linear_separability(z_a: np.ndarray, z_b: np.ndarray, seed: int = 0) -> float:
    """Held-out accuracy of a least-squares linear classifier between two
    embedding clouds (labels +1 / -1, 50/50 split)."""
    rng = np.random.default_rng(seed)

    def split(z):
        idx = rng.permutation(len(z))
        h = len(z) // 2
        return z[idx[:h]], z[idx[h:]]

    atr, ate = split(np.asarray(z_a, dtype=float))
    btr, bte = split(np.asarray(z_b, dtype=float))
    X = np.vstack([atr, btr])
    y = np.concatenate([np.ones(len(atr)), -np.ones(len(btr))])
    W, b = _ols(X, y[:, None], ridge=1e-8)
    pred = np.sign(np.vstack([ate, bte]) @ W + b).ravel()
    truth = np.concatenate([np.ones(len(ate)), -np.ones(len(bte))])
    return float((pred == truth).mean())


def permutation_pvalue(x, y, n_max: int = 20000, seed: int = 0) -> float:
    """One-sided p-value for mean(y) > mean(x) under label exchange.

    Exact enumeration when the number of splits is small, Monte Carlo
    otherwise; the observed split counts toward the tally, so p > 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pooled = np.concatenate([x, y])
    nx, ntot = len(x), len(pooled)
    obs = y.mean() - x.mean()
    total = 0
    hits = 0
    from math import comb
    if comb(ntot, nx) <= n_max:
        splits = combinations(range(ntot), nx)
        for ix in splits:
            mask = np.zeros(ntot, dtype=bool)
            mask[list(ix)] = True
            stat = pooled[~mask].mean() - pooled[mask].mean()
            total += 1
            hits += stat >= obs - 1e-12
    else:
        rng = np.random.default_rng(seed)
        for _ in range(n_max):
            mask = np.zeros(ntot, dtype=bool)
            mask[rng.choice(ntot, nx, replace=False)] = True
            stat = pooled[~mask].mean() - pooled[mask].mean()
            total += 1
            hits += stat >= obs - 1e-12
        total += 1
        hits += 1  # include the observed labelling
    return hits / total


# ---------------------------------------------------------------------------
# Toy planar fields

def toy_field_experiment(geometry_aware: bool, seed: int = 0, n: int = 300,
                         epochs: int = 40) -> dict:
    """Joint embedding of two constant and two rotational planar fields,
    followed by pairwise linear separability of the latent clouds."""
    cfg = TrainConfig(geometry_aware=geometry_aware, m=2, p=2, k=15,
                      out_channels=5, epochs=epochs, seed=seed)
    conds = []
    for ci, kind in enumerate(TOY_KINDS):
        field = toy_fields(kind, n, seed=seed * 37 + ci, condition=ci)
        conds.append(prepare_condition(field, cfg, condition=ci))
    model, latent, history = train(conds, cfg)
    z = {ci: latent.per_condition(ci) for ci in range(4)}
    constant = np.vstack([z[0], z[1]])
    vortex = np.vstack([z[2], z[3]])
    return {
        "geometry_aware": geometry_aware,
        "seed": seed,
        "acc_left_right": linear_separability(z[0], z[1], seed=seed),
        "acc_cw_ccw": linear_separability(z[2], z[3], seed=seed),
        "acc_constant_vortex": linear_separability(constant, vortex, seed=seed),
        "final_train_loss": history[-1][1] if history else None,
        "latent": latent,
    }


# ---------------------------------------------------------------------------
# Van der Pol on a paraboloid

def _lift(traj: TrajectoryEnsemble, beta: float) -> TrajectoryEnsemble:
    """Quadratic lift z = beta (x^2 + y^2) with signed curvature."""
    lifted = []
    for t in traj.trials:
        z = beta * (t[:, 0] ** 2 + t[:, 1] ** 2)
        lifted.append(np.column_stack([t, z]))
    return TrajectoryEnsemble(trials=lifted, condition=list(traj.condition),
                              dt=traj.dt)


def vanderpol_experiment(seed: int = 0, geometry_aware: bool = False,
                         random_curvature: bool = False, n_mu: int = 20,
                         mu_range: tuple = (-0.25, 0.25), n_traj: int = 60,
                         T: float = 20.0, dt: float = 0.1,
                         beta: float = -0.25,
                         init_annulus: tuple = (1.0, 1.5), drop: int = 100,
                         delta_fps: float = 0.04, epochs: int = 100,
                         lr: float = 0.05, subsample: int = 300) -> dict:
    """Embed oscillator vector fields across a damping-parameter sweep and
    summarise the cluster/ordering structure of the distance matrix.

    Trajectories start in an annulus inside the limit cycle (exterior starts
    blow up in finite time when the cycle is repelling) and the first `drop`
    steps are discarded: the early inward/outward spiral is nearly identical
    across conditions and would dilute the damping-dependent late-time
    structure that orders the parameter sweep.
    """
    mus = np.linspace(mu_range[0], mu_range[1], n_mu)
    curv_rng = np.random.default_rng(seed + 500)
    betas = (curv_rng.uniform(-0.2, 0.2, size=n_mu) if random_curvature
             else np.full(n_mu, beta))
    cfg = TrainConfig(geometry_aware=geometry_aware, m=2, p=2, k=20,
                      hidden_channels=32, out_channels=5,
                      delta_fps=delta_fps, epochs=epochs, lr=lr, seed=seed)
    conds = []
    for ci, mu in enumerate(mus):
        ens = simulate_vanderpol(mu, n_traj=n_traj, T=T, dt=dt,
                                 init_annulus=init_annulus,
                                 seed=seed * 1009 + ci, condition=ci)
        mask = ([np.arange(len(t)) >= drop for t in ens.trials]
                if drop else None)
        field = vectors_from_trajectories(_lift(ens, betas[ci]),
                                          keep_mask=mask)
        conds.append(prepare_condition(field, cfg, condition=ci))
    model, latent, history = train(conds, cfg)
    D = distance_matrix(latent, subsample=subsample, seed=seed)
    labels = cluster_distance_matrix(D.d, 2)
    sign = mus > 0
    agree = (labels == labels[sign.argmax()]) == sign
    split_accuracy = max(agree.mean(), 1 - agree.mean())
    spearman = {}
    for name, branch in (("neg", ~sign), ("pos", sign)):
        sub = D.d[np.ix_(branch, branch)]
        coord = classical_mds(sub, 1)[:, 0]
        spearman[name] = float(abs(spearmanr(coord, mus[branch]).statistic))
    return {
        "seed": seed,
        "geometry_aware": geometry_aware,
        "random_curvature": random_curvature,
        "mus": mus,
        "betas": betas,
        "distance": D.d,
        "cluster_labels": labels,
        "split_accuracy": float(split_accuracy),
        "spearman_neg": spearman["neg"],
        "spearman_pos": spearman["pos"],
        "final_train_loss": history[-1][1] if history else None,
        "latent": latent,
    }


# ---------------------------------------------------------------------------
# Sampled low-rank RNNs

def _rnn_field(spec, protocol, gain, n_trials, dt, seed, condition,
               part: str, max_points: int, rng: np.random.Generator):
    """Vector field from the stimulated or unstimulated part of DMTS trials."""
    ens = simulate_rnn_trials(spec, protocol, gain, n_trials, dt, seed=seed,
                              condition=condition)
    masks = ens.extras["stim_mask"]
    if part == "stim":
        keep = [m for m in masks]
    else:
        keep = [~m for m in masks]
    field = vectors_from_trajectories(ens, keep_mask=keep)
    if field.n > max_points:
        sel = np.sort(rng.choice(field.n, max_points, replace=False))
        field = field.select(sel)
    return field


def rnn_experiment(seed: int = 0, N: int = 100,
                   gains: tuple = (0.1, 0.28, 0.46, 0.64, 0.82, 1.0),
                   n_trials: int = 12, dt: float = 10.0,
                   max_points: int = 350, epochs: int = 60,
                   subsample: int = 200, n_controls: int = 3) -> dict:
    """Compare gain-modulated dynamics within and across sampled networks.

    Networks: A1/A2 (same network, independent trials), B (fresh draw from the
    same loading statistics), C (different statistics). Zero-gain controls are
    extra conditions of network A with the stimulus switched off. All
    conditions are embedded jointly in geometry-agnostic mode.
    """
    # Subthreshold recurrence (gain < 1) keeps the rest state stable, so
    # zero-gain control trials all sample the same noise ball and their
    # pairwise distances vanish; the stimulus then drives gain-proportional
    # excursions. The "different statistics" network is suprathreshold.
    stats_same = default_rnn_stats(connectivity_gain=0.8)
    stats_diff = default_rnn_stats(connectivity_gain=2.5, input_mean=0.5)
    specs = {"A1": sample_gaussian_lowrank_rnn(N, stats_same, seed=seed),
             "B": sample_gaussian_lowrank_rnn(N, stats_same, seed=seed + 1),
             "C": sample_gaussian_lowrank_rnn(N, stats_diff, seed=seed + 2)}
    specs["A2"] = specs["CTRL"] = specs["A1"]
    protocol = DMTSProtocol()
    rng = np.random.default_rng(seed + 77)

    cfg = TrainConfig(geometry_aware=False, m=2, p=2, k=8,
                      hidden_channels=32, out_channels=3,
                      delta_fps=0.01, epochs=epochs, seed=seed)

    # planarity of the raw ensemble before any embedding
    plan_ens = simulate_rnn_trials(specs["A1"], protocol, gains[-1], 5, dt,
                                   seed=seed + 33)
    X = np.vstack(plan_ens.trials)
    _, _, ratio = pca_reduce(X, 2)
    planarity = float(ratio.sum())

    layout = [("A1", g, gi) for gi, g in enumerate(gains)]
    layout += [("CTRL", 0.0, 2500 + ci) for ci in range(n_controls)]
    layout += [(tag, g, off + gi) for tag, off in
               (("A2", 5000), ("B", 9000), ("C", 13000))
               for gi, g in enumerate(gains)]
    table = []  # (condition id, network tag, gain)
    conds = []
    for ci, (tag, gain, seed_off) in enumerate(layout):
        field = _rnn_field(specs[tag], protocol, gain, n_trials, dt,
                           seed=seed + seed_off, condition=ci,
                           part="stim", max_points=max_points, rng=rng)
        conds.append(prepare_condition(field, cfg, condition=ci))
        table.append((ci, tag, gain))
    model, latent, history = train(conds, cfg)
    D = distance_matrix(latent, subsample=subsample, seed=seed)

    def cid(tag, gain=None):
        out = [int(np.flatnonzero(D.labels == c)[0]) for c, t, g in table
               if t == tag and (gain is None or g == gain)]
        if not out:
            raise KeyError((tag, gain))
        return out if gain is None else out[0]

    stim_ids = [cid("A1", g) for g in gains]
    ctrl_ids = cid("CTRL")
    stim_pairs = np.array([D.d[i, j] for i, j in combinations(stim_ids, 2)])
    ctrl_pairs = np.array([D.d[i, j] for i, j in combinations(ctrl_ids, 2)])

    within = np.array([D.d[cid("A1", g), cid("A2", g)] for g in gains])
    cross_same = np.array([D.d[cid("A1", g), cid("B", g)] for g in gains])
    cross_diff = np.array([D.d[cid("A1", g), cid("C", g)] for g in gains])
    p_same = permutation_pvalue(within, cross_same)
    p_diff = permutation_pvalue(within, cross_diff)

    return {
        "seed": seed,
        "gains": np.asarray(gains),
        "planarity": planarity,
        "stim_pair_distances": stim_pairs,
        "ctrl_pair_distances": ctrl_pairs,
        "ctrl_below_stim_p10": bool(
            ctrl_pairs.max() < np.percentile(stim_pairs, 10)),
        "within_network": within,
        "cross_same_stats": cross_same,
        "cross_diff_stats": cross_diff,
        "p_same_stats": float(p_same),
        "p_diff_stats": float(p_diff),
        "distance": D.d,
        "condition_table": table,
        "final_train_loss": history[-1][1] if history else None,
        "latent": latent,
    }


# ---------------------------------------------------------------------------
# Reproduction driver

def repro_summaries(seed: int = 0, quick: bool = False) -> dict:
    """Run the three synthetic experiments and collect scalar summaries.

    `quick` shrinks every experiment (fewer conditions, nodes, epochs) while
    exercising the identical code paths; useful for determinism checks.
    """
    if quick:
        toy_kw = dict(n=120, epochs=10)
        vdp_kw = dict(n_mu=6, n_traj=10, T=4.0, drop=10, epochs=10,
                      subsample=100)
        rnn_kw = dict(N=40, gains=(0.3, 1.0), n_trials=4, max_points=150,
                      epochs=8, subsample=100, n_controls=2)
    else:
        toy_kw, vdp_kw, rnn_kw = {}, {}, {}
    out = {"seed": seed, "quick": quick}
    toy = toy_field_experiment(geometry_aware=True, seed=seed, **toy_kw)
    out["toy"] = {k: toy[k] for k in
                  ("acc_left_right", "acc_cw_ccw", "acc_constant_vortex",
                   "final_train_loss")}
    vdp = vanderpol_experiment(seed=seed, **vdp_kw)
    out["vanderpol"] = {k: vdp[k] for k in
                        ("split_accuracy", "spearman_neg", "spearman_pos",
                         "final_train_loss")}
    rnn = rnn_experiment(seed=seed, **rnn_kw)
    out["rnn"] = {
        "planarity": rnn["planarity"],
        "p_same_stats": rnn["p_same_stats"],
        "p_diff_stats": rnn["p_diff_stats"],
        "ctrl_max": float(rnn["ctrl_pair_distances"].max()),
        "stim_p10": float(np.percentile(rnn["stim_pair_distances"], 10)),
        "final_train_loss": rnn["final_train_loss"],
    }
    return out
