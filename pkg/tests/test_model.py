import numpy as np
import pytest
import torch

from flowrep import (FlowEmbedder, TrainConfig, contrastive_loss, embed,
                     load_checkpoint, prepare_condition,
                     sample_contrastive_pairs, save_checkpoint, toy_fields,
                     train)
from flowrep.calculus import channel_count
from flowrep.model import _split_nodes, initial_loss


def make_condition(kind="linear", n=150, seed=0, condition=0, **cfg_kwargs):
    cfg = TrainConfig(epochs=0, **cfg_kwargs)
    field = toy_fields(kind, n, seed=seed, condition=condition)
    return prepare_condition(field, cfg, condition=condition), cfg


class TestContrastiveLoss:
    def test_orthogonal_embeddings(self):
        z = torch.zeros(4, 3, dtype=torch.float64)
        loss = contrastive_loss(z, z, z)
        assert abs(float(loss) - 2 * np.log(2)) < 1e-12

    def test_numpy_oracle(self):
        rng = np.random.default_rng(0)
        zi = torch.tensor(rng.normal(size=(6, 3)))
        zj = torch.tensor(rng.normal(size=(6, 3)))
        zk = torch.tensor(rng.normal(size=(6, 3)))
        pos = (zi * zj).sum(-1).numpy()
        neg = (zi * zk).sum(-1).numpy()
        expected = (np.log1p(np.exp(-pos)) + np.log1p(np.exp(neg))).mean()
        assert abs(float(contrastive_loss(zi, zj, zk)) - expected) < 1e-12

    def test_large_logits_stable(self):
        zi = torch.tensor([[1e4, 0.0]], dtype=torch.float64)
        loss = contrastive_loss(zi, zi, -zi)
        assert torch.isfinite(loss)
        assert float(loss) < 1e-6


class TestPairSampling:
    def test_positives_are_neighbors(self):
        cond, _ = make_condition(seed=1)
        rng = np.random.default_rng(0)
        anchors = np.arange(cond.n)
        pos, neg = sample_contrastive_pairs(cond.graph, anchors, rng)
        adj = cond.graph.adjacency().toarray()
        assert all(adj[i, j] for i, j in zip(anchors, pos))
        assert np.all((0 <= neg) & (neg < cond.n))

    def test_negatives_roughly_uniform(self):
        cond, _ = make_condition(seed=2)
        rng = np.random.default_rng(1)
        anchors = np.zeros(20000, dtype=int)
        _, neg = sample_contrastive_pairs(cond.graph, anchors, rng)
        counts = np.bincount(neg, minlength=cond.n)
        expected = len(anchors) / cond.n
        chi2 = ((counts - expected) ** 2 / expected).sum()
        # dof = n - 1; mean n-1, sd ~ sqrt(2(n-1))
        assert abs(chi2 - (cond.n - 1)) < 6 * np.sqrt(2 * (cond.n - 1))

    def test_empty_anchors(self):
        cond, _ = make_condition()
        with pytest.raises(ValueError):
            sample_contrastive_pairs(cond.graph, np.array([], dtype=int),
                                     np.random.default_rng(0))


class TestSplitNodes:
    def test_partition_and_fractions(self):
        splits = _split_nodes([200, 57], seed=3)
        for n, sp in zip([200, 57], splits):
            allidx = np.concatenate([sp["train"], sp["val"], sp["test"]])
            assert np.array_equal(np.sort(allidx), np.arange(n))
            assert len(sp["train"]) == int(round(0.8 * n))
            assert len(sp["val"]) == int(round(0.1 * n))

    def test_seed_determinism(self):
        a = _split_nodes([100], seed=5)[0]
        b = _split_nodes([100], seed=5)[0]
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestFlowEmbedder:
    def test_output_shape(self):
        for aware in (True, False):
            cond, cfg = make_condition(geometry_aware=aware, seed=3)
            model = FlowEmbedder(cfg)
            z = model(cond)
            assert z.shape == (cond.n, cfg.out_channels)

    def test_head_numpy_oracle_aware(self):
        cfg = TrainConfig(geometry_aware=True, seed=7)
        model = FlowEmbedder(cfg)
        c = channel_count(cfg.m, cfg.p)
        feats = torch.tensor(np.random.default_rng(0).normal(size=(5, cfg.m, c)))
        out = model.head(feats).detach().numpy()
        x = feats.numpy().reshape(5, -1)
        W1 = model.lin1.weight.detach().numpy()
        b1 = model.lin1.bias.detach().numpy()
        W2 = model.lin2.weight.detach().numpy()
        b2 = model.lin2.bias.detach().numpy()
        expected = np.maximum(x @ W1.T + b1, 0) @ W2.T + b2
        assert np.abs(out - expected).max() < 1e-12

    def test_head_numpy_oracle_agnostic(self):
        cfg = TrainConfig(geometry_aware=False, seed=7)
        model = FlowEmbedder(cfg)
        c = channel_count(cfg.m, cfg.p)
        f = np.random.default_rng(1).normal(size=(4, cfg.m, c))
        out = model.head(torch.tensor(f)).detach().numpy()
        g = f.sum(axis=2)
        A = model.inner_A.detach().numpy()
        x = np.einsum("nmc,cmk,nk->nc", f, A, g)
        W1 = model.lin1.weight.detach().numpy()
        b1 = model.lin1.bias.detach().numpy()
        W2 = model.lin2.weight.detach().numpy()
        b2 = model.lin2.bias.detach().numpy()
        expected = np.maximum(x @ W1.T + b1, 0) @ W2.T + b2
        assert np.abs(out - expected).max() < 1e-12

    def test_inner_products_rotation_invariant_at_identity(self):
        # with A = identity, per-node rotations of the tangent components
        # leave the invariant features unchanged
        cfg = TrainConfig(geometry_aware=False, seed=2)
        model = FlowEmbedder(cfg)
        rng = np.random.default_rng(3)
        c = channel_count(cfg.m, cfg.p)
        f = rng.normal(size=(6, cfg.m, c))
        theta = rng.uniform(0, 2 * np.pi, size=6)
        Q = np.stack([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]]).transpose(2, 0, 1)
        f_rot = np.einsum("nab,nbc->nac", Q, f)
        z0 = model.head(torch.tensor(f)).detach().numpy()
        z1 = model.head(torch.tensor(f_rot)).detach().numpy()
        assert np.abs(z0 - z1).max() < 1e-10

    def test_seed_changes_init(self):
        a = FlowEmbedder(TrainConfig(seed=0)).lin1.weight
        b = FlowEmbedder(TrainConfig(seed=1)).lin1.weight
        assert not torch.allclose(a, b)

    def test_same_seed_same_init(self):
        a = FlowEmbedder(TrainConfig(seed=4))
        b = FlowEmbedder(TrainConfig(seed=4))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestGradients:
    def _loss(self, model, cond, rng):
        anchors = np.arange(0, cond.n, 3)
        pos, neg = sample_contrastive_pairs(cond.graph, anchors, rng)
        z = model(cond)
        return contrastive_loss(z[anchors], z[pos], z[neg])

    @pytest.mark.parametrize("aware", [True, False])
    def test_autograd_matches_finite_differences(self, aware):
        cond, cfg = make_condition(kind="vortex-cw", n=80, seed=4,
                                   geometry_aware=aware)
        model = FlowEmbedder(cfg)
        rng_state = np.random.default_rng(9)
        pairs_rng = np.random.default_rng(9)
        loss = self._loss(model, cond, pairs_rng)
        loss.backward()
        grads = torch.cat([p.grad.reshape(-1) for p in model.parameters()])
        params = list(model.parameters())
        flat = torch.cat([p.detach().reshape(-1) for p in params])

        def loss_at(vec):
            offset = 0
            with torch.no_grad():
                for p in params:
                    sz = p.numel()
                    p.copy_(vec[offset:offset + sz].reshape(p.shape))
                    offset += sz
            if hasattr(cond, "_feat_cache"):
                del cond._feat_cache
            with torch.no_grad():
                return float(self._loss(model, cond, np.random.default_rng(9)))

        rng = np.random.default_rng(11)
        h = 1e-6
        for idx in rng.choice(len(flat), size=25, replace=False):
            e = torch.zeros_like(flat)
            e[idx] = h
            fd = (loss_at(flat + e) - loss_at(flat - e)) / (2 * h)
            g = float(grads[idx])
            denom = max(abs(fd), abs(g), 1e-8)
            # absolute floor absorbs central-difference noise on components
            # whose gradient is itself at roundoff scale
            assert abs(fd - g) < 1e-4 * denom + 1e-9, (idx, fd, g)


class TestTraining:
    def _conditions(self, cfg):
        kinds = ["constant-left", "constant-right"]
        return [prepare_condition(toy_fields(k, 150, seed=i, condition=i),
                                  cfg, condition=i)
                for i, k in enumerate(kinds)]

    def test_zero_epochs_keeps_init(self):
        cfg = TrainConfig(epochs=0, seed=0)
        conds = self._conditions(cfg)
        model, latent, history = train(conds, cfg)
        fresh = FlowEmbedder(cfg)
        for pa, pb in zip(model.parameters(), fresh.parameters()):
            assert torch.equal(pa, pb)
        assert history == []
        assert latent.z.shape[0] == sum(c.n for c in conds)

    def test_loss_decreases(self):
        cfg = TrainConfig(epochs=25, seed=0, geometry_aware=True)
        conds = self._conditions(cfg)
        start = initial_loss(conds, cfg)
        _, _, history = train(conds, cfg)
        assert history[-1][1] < start

    def test_seed_determinism(self):
        cfg = TrainConfig(epochs=5, seed=1)
        z1 = train(self._conditions(cfg), cfg)[1].z
        z2 = train(self._conditions(cfg), cfg)[1].z
        assert np.array_equal(z1, z2)

    def test_no_conditions(self):
        with pytest.raises(ValueError):
            train([], TrainConfig())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = TrainConfig(epochs=3, seed=0, geometry_aware=False)
        field = toy_fields("saddle", 120, seed=0)
        cond = prepare_condition(field, cfg)
        model, latent, _ = train([cond], cfg)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, model, extra={"note": "test"})
        restored = load_checkpoint(path)
        z = embed([cond], restored).z
        assert np.allclose(z, latent.z, atol=1e-12)
        assert restored.cfg == model.cfg

    def test_bad_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestDiffusion:
    def test_tau_parameter_trains(self):
        cfg = TrainConfig(epochs=5, seed=0, diffusion=True, k_eig=64)
        field = toy_fields("vortex-cw", 120, seed=0)
        cond = prepare_condition(field, cfg)
        model, _, _ = train([cond], cfg)
        assert model.tau_raw is not None
        assert float(model.tau.detach()) >= 0

    def test_diffusion_off_has_no_tau(self):
        model = FlowEmbedder(TrainConfig(diffusion=False))
        assert model.tau is None
