"""Contrastive embedding of local flow-field features.

The trainable head maps per-node derivative features (optionally made
rotation-invariant by learnable inner products) through a two-layer MLP,
trained with a negative-sampling contrastive objective shared across all
conditions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .calculus import (build_filter_matrices, channel_count, derivative_features,
                       directional_derivative_kernels, project_to_tangent)
from .data import LatentDistribution, VectorFieldSample
from .geometry import (build_connection_laplacian, compute_connections,
                       estimate_frames)
from .graph import ProximityGraph, build_cknn_graph, farthest_point_subsample


@dataclass
class TrainConfig:
    geometry_aware: bool = True  # inner products OFF when aware
    m: int = 2
    p: int = 2
    k: int = 15
    delta_cknn: float = 1.0
    delta_fps: float = 0.0
    diffusion: bool = False
    hidden_channels: int = 32
    out_channels: int = 3
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 100
    patience: int = 20
    seed: int = 0
    k_eig: int = 128

    def __post_init__(self):
        for name in ("m", "p", "k", "hidden_channels", "out_channels",
                     "batch_size", "patience", "seed", "k_eig"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("invalid learning rate or batch size")


class ConditionData:
    """Precomputed geometry and signal for one condition (one manifold)."""

    def __init__(self, graph: ProximityGraph, signal: np.ndarray,
                 filter_mats: list, spectral=None, condition: int = 0,
                 node_ids: np.ndarray | None = None):
        self.graph = graph
        self.condition = condition
        self.node_ids = node_ids
        self.n, self.m = signal.shape
        self.signal = torch.tensor(signal, dtype=torch.float64)
        self.filter_mats = [self._to_torch(B) for B in filter_mats]
        if spectral is not None:
            evals, evecs, d_half, d_invhalf = spectral
            self.spectral = tuple(torch.tensor(a, dtype=torch.float64)
                                  for a in (evals, evecs, d_half, d_invhalf))
        else:
            self.spectral = None

    @staticmethod
    def _to_torch(B):
        coo = B.tocoo()
        idx = torch.tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
        vals = torch.tensor(coo.data, dtype=torch.float64)
        return torch.sparse_coo_tensor(idx, vals, coo.shape,
                                       check_invariants=False).coalesce()


def prepare_condition(field: VectorFieldSample, cfg: TrainConfig,
                      condition: int = 0) -> ConditionData:
    """Full geometric preprocessing for one condition's vector-field sample."""
    idx = farthest_point_subsample(field.base, cfg.delta_fps)
    sub = field.select(idx)
    graph = build_cknn_graph(sub.base, cfg.k, cfg.delta_cknn)
    if graph.node_ids is not None and len(graph.node_ids) < sub.n:
        sub = sub.select(graph.node_ids)
    frames = estimate_frames(sub.base, graph, cfg.m)
    connections = compute_connections(frames, graph)
    kernels = directional_derivative_kernels(graph, frames)
    mats = build_filter_matrices(kernels, connections)
    signal = project_to_tangent(sub, frames)
    spectral = None
    if cfg.diffusion:
        L = build_connection_laplacian(graph, connections)
        spectral = L.spectral_factors(cfg.k_eig)
    kept = idx if graph.node_ids is None else idx[graph.node_ids]
    return ConditionData(graph, signal, mats, spectral=spectral,
                         condition=condition, node_ids=kept)


class FlowEmbedder(torch.nn.Module):
    """Derivative features -> (optional inner products) -> 2-layer MLP."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        m, p = cfg.m, cfg.p
        self.c = channel_count(m, p)
        in_dim = self.c if not cfg.geometry_aware else m * self.c
        gen = torch.Generator().manual_seed(cfg.seed)
        self.lin1 = torch.nn.Linear(in_dim, cfg.hidden_channels).double()
        self.lin2 = torch.nn.Linear(cfg.hidden_channels, cfg.out_channels).double()
        with torch.no_grad():
            for lin in (self.lin1, self.lin2):
                w = torch.empty_like(lin.weight)
                torch.nn.init.kaiming_uniform_(w, nonlinearity="relu", generator=gen)
                lin.weight.copy_(w)
                lin.bias.zero_()
        if not cfg.geometry_aware:
            eye = torch.eye(m, dtype=torch.float64).expand(self.c, m, m).clone()
            self.inner_A = torch.nn.Parameter(eye)
        else:
            self.inner_A = None
        if cfg.diffusion:
            # tau = softplus(tau_raw), initialised near zero
            self.tau_raw = torch.nn.Parameter(torch.tensor(-5.0, dtype=torch.float64))
        else:
            self.tau_raw = None

    @property
    def tau(self):
        if self.tau_raw is None:
            return None
        return torch.nn.functional.softplus(self.tau_raw)

    def _diffuse(self, cond: ConditionData, signal):
        evals, evecs, d_half, d_invhalf = cond.spectral
        x = d_half * signal.reshape(-1)
        coeff = evecs.T @ x
        y = evecs @ (torch.exp(-self.tau * evals) * coeff)
        return (d_invhalf * y).reshape(cond.n, cond.m)

    def features(self, cond: ConditionData):
        """Derivative-feature tensor (n, m, c) for one condition."""
        m, p = cond.m, self.cfg.p
        diffusing = self.cfg.diffusion and cond.spectral is not None
        if not diffusing:
            # feature tensor has no trainable inputs; compute once per condition
            cached = getattr(cond, "_feat_cache", None)
            if cached is not None and cached.shape[2] == channel_count(m, p):
                return cached
        signal = cond.signal
        if diffusing:
            signal = self._diffuse(cond, signal)
        channels = [signal]
        prev = [signal]
        for _ in range(p):
            new = []
            for v in prev:
                grads = torch.stack(
                    [torch.sparse.mm(B, v.reshape(-1, 1)).reshape(cond.n, m)
                     for B in cond.filter_mats])  # (m_q, n, m_l)
                for l in range(m):
                    new.append(grads[:, :, l].T)
            channels.extend(new)
            prev = new
        feats = torch.stack(channels, dim=2)  # (n, m, c)
        if not diffusing:
            cond._feat_cache = feats.detach()
            return cond._feat_cache
        return feats

    def head(self, feats):
        """Inner products (if enabled) plus MLP, on an (n, m, c) feature tensor."""
        if self.inner_A is not None:
            g = feats.sum(dim=2)  # (n, m)
            x = torch.einsum("nmc,cmk,nk->nc", feats, self.inner_A, g)
        else:
            x = feats.reshape(feats.shape[0], -1)
        h = torch.relu(self.lin1(x))
        return self.lin2(h)

    def forward(self, cond: ConditionData):
        return self.head(self.features(cond))


def contrastive_loss(z_i, z_j, z_k):
    """Negative-sampling loss -log s(zi.zj) - log s(-zi.zk), log-sum-exp stable."""
    pos = (z_i * z_j).sum(-1)
    neg = (z_i * z_k).sum(-1)
    return (torch.nn.functional.softplus(-pos)
            + torch.nn.functional.softplus(neg)).mean()


def sample_contrastive_pairs(graph: ProximityGraph, anchors: np.ndarray,
                             rng: np.random.Generator):
    """One-step random-walk positive and one uniform negative per anchor."""
    anchors = np.asarray(anchors)
    if anchors.size == 0:
        raise ValueError("anchors must be nonempty")
    pos = np.empty_like(anchors)
    for a, i in enumerate(anchors):
        nbrs = graph._neighbors[i]
        if not nbrs:
            raise ValueError(f"anchor {i} is isolated")
        pos[a] = nbrs[rng.integers(len(nbrs))]
    neg = rng.integers(graph.n, size=len(anchors))
    return pos, neg


def _split_nodes(counts, seed):
    """Global 80/10/10 node split across conditions; returns per-condition masks."""
    rng = np.random.default_rng(seed)
    splits = []
    for n in counts:
        perm = rng.permutation(n)
        n_train = int(round(0.8 * n))
        n_val = int(round(0.1 * n))
        splits.append({
            "train": np.sort(perm[:n_train]),
            "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:]),
        })
    return splits


def train(conditions: list, cfg: TrainConfig, verbose: bool = False):
    """Joint contrastive training over all conditions with shared weights.

    Returns (model, LatentDistribution, history) where history rows are
    (epoch, train_loss, val_loss).
    """
    if not conditions:
        raise ValueError("at least one condition required")
    torch.manual_seed(cfg.seed)
    model = FlowEmbedder(cfg)
    rng = np.random.default_rng(cfg.seed)
    splits = _split_nodes([c.n for c in conditions], cfg.seed)

    # fixed validation pairs for a deterministic early-stopping signal
    val_rng = np.random.default_rng(cfg.seed + 1)
    val_pairs = []
    for cond, sp in zip(conditions, splits):
        if len(sp["val"]):
            pj, nk = sample_contrastive_pairs(cond.graph, sp["val"], val_rng)
            val_pairs.append((cond, sp["val"], pj, nk))

    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    history = []
    best_val = np.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stall = 0
    for epoch in range(cfg.epochs):
        # assemble this epoch's shuffled anchor batches across conditions
        batches = []
        for ci, (cond, sp) in enumerate(zip(conditions, splits)):
            anchors = sp["train"].copy()
            rng.shuffle(anchors)
            for b in range(0, len(anchors), cfg.batch_size):
                batches.append((ci, anchors[b:b + cfg.batch_size]))
        order = rng.permutation(len(batches))

        model.train()
        train_loss = 0.0
        n_batches = 0
        for bi in order:
            ci, anchors = batches[bi]
            cond = conditions[ci]
            pos, neg = sample_contrastive_pairs(cond.graph, anchors, rng)
            z = model(cond)
            loss = contrastive_loss(z[anchors], z[pos], z[neg])
            opt.zero_grad()
            loss.backward()
            opt.step()
            if not torch.isfinite(loss):
                raise RuntimeError(f"divergence: non-finite loss at epoch {epoch}")
            train_loss += float(loss.detach())
            n_batches += 1

        model.eval()
        with torch.no_grad():
            val_loss, n_val = 0.0, 0
            for cond, anchors, pos, neg in val_pairs:
                z = model(cond)
                val_loss += float(contrastive_loss(z[anchors], z[pos], z[neg])) * len(anchors)
                n_val += len(anchors)
            val_loss = val_loss / max(n_val, 1)
        train_loss = train_loss / max(n_batches, 1)
        history.append((epoch, train_loss, val_loss))
        if verbose:
            print(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f}")
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if cfg.epochs > 0:
        model.load_state_dict(best_state)
    latent = embed(conditions, model)
    return model, latent, history


def embed(conditions: list, model: FlowEmbedder) -> LatentDistribution:
    """Deterministic forward pass over all nodes of all conditions."""
    model.eval()
    zs, cids = [], []
    with torch.no_grad():
        for cond in conditions:
            z = model(cond).numpy()
            zs.append(z)
            cids.append(np.full(cond.n, cond.condition))
    return LatentDistribution(z=np.vstack(zs), condition_id=np.concatenate(cids))


def initial_loss(conditions: list, cfg: TrainConfig) -> float:
    """Contrastive loss of the freshly initialised network over training pairs."""
    torch.manual_seed(cfg.seed)
    model = FlowEmbedder(cfg)
    rng = np.random.default_rng(cfg.seed)
    splits = _split_nodes([c.n for c in conditions], cfg.seed)
    total, count = 0.0, 0
    with torch.no_grad():
        for cond, sp in zip(conditions, splits):
            anchors = sp["train"]
            pos, neg = sample_contrastive_pairs(cond.graph, anchors, rng)
            z = model(cond)
            total += float(contrastive_loss(z[anchors], z[pos], z[neg])) * len(anchors)
            count += len(anchors)
    return total / max(count, 1)


def save_checkpoint(path, model: FlowEmbedder, extra: dict | None = None):
    state = {k: v.tolist() for k, v in model.state_dict().items()}
    doc = {"format": "flowrep-checkpoint-v1", "config": asdict(model.cfg),
           "state": state}
    if extra:
        doc["meta"] = extra
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> FlowEmbedder:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "flowrep-checkpoint-v1":
        raise ValueError("unrecognized checkpoint format")
    cfg = TrainConfig(**doc["config"])
    model = FlowEmbedder(cfg)
    state = {k: torch.tensor(v, dtype=torch.float64) for k, v in doc["state"].items()}
    model.load_state_dict(state)
    return model
