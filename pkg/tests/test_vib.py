"""Exploration plug-in: latent encode/decode, on-manifold sampling, VIB loss,
and the gradient-isolation contract."""

import numpy as np
import pytest

from manex.diffusion import time_embedding
from manex.errors import ConfigError, ShapeError
from manex.nets import AdamW
from manex.policy import DiffusionPolicy, Normalizer, PolicyConfig
from manex.rng import RngStream
from manex.vib import LatentGaussian, VibConfig, VibPlugin, joint_train_step

POL = PolicyConfig(horizon=4, diffusion_steps=8, ddim_steps=4, embed_dim=6, hidden=16, time_dim=4)
VIB = VibConfig(latent_dim=3, beta=1e-3, alpha=2.0, hidden=12)


def make_pair(seed=200):
    pol = DiffusionPolicy(5, 2, POL, rng=RngStream(seed, "vib-pol"))
    plug = VibPlugin(POL.embed_dim, VIB, rng=RngStream(seed, "golden-vib"))
    return pol, plug


class TestLatentCodec:
    def test_zero_parameter_encoder_is_standard(self):
        plug = VibPlugin(6, VIB)
        g = plug.encode_latent(np.array([1.0, 2.0, 3.0, 0.0, -1.0, 5.0]))
        assert np.array_equal(g.mu, np.zeros(3))
        assert np.array_equal(g.sigma, np.ones(3))

    def test_deterministic(self):
        plug = VibPlugin(6, VIB, rng=RngStream(200, "golden-vib"))
        c = np.array([0.2, -0.4, 0.7, 0.0, -0.9, 0.3])
        a, b = plug.encode_latent(c), plug.encode_latent(c)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)

    def test_golden_encode(self):
        plug = VibPlugin(6, VIB, rng=RngStream(200, "golden-vib"))
        g = plug.encode_latent(np.array([0.2, -0.4, 0.7, 0.0, -0.9, 0.3]))
        assert np.allclose(
            g.mu,
            [-1.0764812922725495, 0.06828971769825776, 0.6199638647621177],
            atol=1e-12,
        )
        assert np.allclose(
            g.sigma,
            [0.7778033584569938, 6.440777438355968, 1.7562603361385551],
            atol=1e-12,
        )

    def test_zero_parameter_decoder(self):
        plug = VibPlugin(6, VIB)
        assert np.array_equal(plug.decode_latent(np.ones(3)), np.zeros(6))

    def test_golden_decode(self):
        plug = VibPlugin(6, VIB, rng=RngStream(200, "golden-vib"))
        ct = plug.decode_latent(np.array([0.5, -0.25, 1.5]))
        frozen = [
            0.9224071391220094,
            0.05749216457173001,
            -0.06355003793181968,
            0.24335492076586157,
            0.45293731567497997,
            -0.06713986291090393,
        ]
        assert np.allclose(ct, frozen, atol=1e-12)

    def test_decode_width_mismatch(self):
        plug = VibPlugin(6, VIB)
        with pytest.raises(ShapeError):
            plug.decode_latent(np.zeros(4))


class TestExploreEmbedding:
    def test_alpha_zero_deterministic(self):
        _, plug = make_pair()
        c = np.array([0.2, -0.4, 0.7, 0.0, -0.9, 0.3])
        ct1, z1, g = plug.explore_embedding(c, 0.0, None)
        ct2, z2, _ = plug.explore_embedding(c, 0.0, None)
        assert np.array_equal(ct1, ct2) and np.array_equal(z1, z2)
        assert np.array_equal(z1, g.mu)
        assert np.array_equal(ct1, plug.decode_latent(g.mu))

    def test_spread_increases_with_alpha(self):
        _, plug = make_pair()
        c = np.array([0.2, -0.4, 0.7, 0.0, -0.9, 0.3])
        base = plug.decode_latent(plug.encode_latent(c).mu)
        means = []
        for alpha in (0.25, 1.0, 3.0):
            rng = RngStream(77, f"spread{alpha}")
            dists = [
                np.linalg.norm(plug.explore_embedding(c, alpha, rng)[0] - base)
                for _ in range(1000)
            ]
            means.append(np.mean(dists))
        assert means[0] < means[1] < means[2]

    def test_fixed_seed_reproducible(self):
        _, plug = make_pair()
        c = np.array([0.2, -0.4, 0.7, 0.0, -0.9, 0.3])
        a = plug.explore_embedding(c, 2.0, RngStream(5, "e"))[0]
        b = plug.explore_embedding(c, 2.0, RngStream(5, "e"))[0]
        assert np.array_equal(a, b)

    def test_negative_alpha_rejected(self):
        _, plug = make_pair()
        with pytest.raises(ConfigError):
            plug.explore_embedding(np.zeros(6), -1.0, RngStream(0, "x"))


class TestVibLoss:
    def _batch(self, n=12):
        obs = RngStream(31, "vobs").normal((n, 5))
        chunks = RngStream(32, "vact").uniform(-0.04, 0.04, (n, POL.horizon, 2))
        return obs, chunks

    def test_beta_zero_is_reconstruction_only(self):
        pol, plug = make_pair()
        obs, chunks = self._batch()
        plug.cfg.beta = 0.0
        total0, kl0, _ = plug.vib_loss(pol, obs, chunks, RngStream(40, "v"))
        plug.cfg.beta = 1e-3
        total1, kl1, _ = plug.vib_loss(pol, obs, chunks, RngStream(40, "v"))
        assert kl0 == kl1  # same draws, same KL value
        assert np.isclose(total1 - total0, 1e-3 * kl1, atol=1e-12)

    def test_isolation_contract_exact_zero(self):
        pol, plug = make_pair()
        obs, chunks = self._batch()
        _, _, grads = plug.vib_loss(pol, obs, chunks, RngStream(41, "v"))
        for g in grads["encoder"] + grads["head"]:
            assert np.array_equal(g, np.zeros_like(g))
        # plug-in grads are live
        assert any(np.any(g != 0) for g in grads["latenc"])
        assert any(np.any(g != 0) for g in grads["latdec"])

    def test_matches_independent_recomputation(self):
        pol, plug = make_pair()
        obs, chunks = self._batch()
        total, kl, _ = plug.vib_loss(pol, obs, chunks, RngStream(42, "v"))

        r = RngStream(42, "v")
        B = obs.shape[0]
        k = r.integers(1, pol.sched.K + 1, B)
        eps = r.normal((B, pol.chunk_elems))
        eps_z = r.normal((B, plug.cfg.latent_dim))
        a0 = pol.normalizer.encode(chunks).reshape(B, pol.chunk_elems)
        recon = 0.0
        klsum = 0.0
        for i in range(B):
            ab = pol.sched.alpha_bar[k[i]]
            a_k = np.sqrt(ab) * a0[i] + np.sqrt(1 - ab) * eps[i]
            c = pol.encode_observation(obs[i])
            g = plug.encode_latent(c)
            z = g.mu + g.sigma * eps_z[i]
            ct = plug.decode_latent(z)
            inp = np.concatenate([a_k, ct, time_embedding(int(k[i]), POL.time_dim)])
            pred = pol.head.forward(inp)
            recon += float(np.sum((eps[i] - pred) ** 2))
            klsum += float(
                0.5 * np.sum(g.mu**2 + g.sigma**2 - 1.0 - 2.0 * np.log(g.sigma))
            )
        expected = recon / B + plug.cfg.beta * klsum / B
        assert np.isclose(total, expected, atol=1e-10)
        assert np.isclose(kl, klsum / B, atol=1e-10)

    def test_empty_batch_rejected(self):
        pol, plug = make_pair()
        with pytest.raises(ShapeError):
            plug.vib_loss(pol, np.zeros((0, 5)), np.zeros((0, POL.horizon, 2)), RngStream(1, "v"))


class TestJointStep:
    def _perfect_pair(self):
        # zero encoder (c = 0), zero plug-in (mu=0, sigma=1, c~=0), and a head
        # that reconstructs eps exactly for zero chunks at K=1
        cfg = PolicyConfig(horizon=2, diffusion_steps=1, ddim_steps=1, embed_dim=4, hidden=8, time_dim=4)
        pol = DiffusionPolicy(3, 1, cfg, normalizer=Normalizer(lo=np.zeros(1), hi=np.zeros(1)))
        pol.sched.alpha_bar[1] = 0.75  # sqrt(1 - ab) = 0.5 exactly, so the inverse is exact
        scale = 1.0 / np.sqrt(1.0 - pol.sched.alpha_bar[1])
        pol.head.weights[0][:2, :2] = np.eye(2) * scale
        pol.head.weights[0][:2, 2:4] = -np.eye(2) * scale
        pol.head.weights[1][:4, :4] = np.eye(4)
        pol.head.weights[2][:2, :2] = np.eye(2)
        pol.head.weights[2][2:4, :2] = -np.eye(2)
        plug = VibPlugin(4, VibConfig(latent_dim=2, beta=0.0, hidden=6))
        return pol, plug

    def test_perfect_nets_zero_loss_and_decay_only(self):
        pol, plug = self._perfect_pair()
        obs = np.zeros((8, 3))
        chunks = np.zeros((8, 2, 1))
        before = [p.copy() for p in pol.head.parameters()]
        opt_base = AdamW(
            pol.encoder.parameters() + pol.head.parameters(), lr=0.1, weight_decay=0.0
        )
        opt_vib = AdamW(plug.p_enc.parameters() + plug.q_dec.parameters(), lr=0.1, weight_decay=0.0)
        il, ib = joint_train_step(
            pol, plug, obs, chunks, opt_base, opt_vib, RngStream(1, "il"), RngStream(2, "vib")
        )
        assert il == 0.0 and ib == 0.0
        for p, b in zip(pol.head.parameters(), before):
            assert np.array_equal(p, b)

    def test_perfect_nets_decay_shrinks_params(self):
        pol, plug = self._perfect_pair()
        before = [p.copy() for p in pol.head.parameters()]
        opt_base = AdamW(
            pol.encoder.parameters() + pol.head.parameters(), lr=0.1, weight_decay=0.5
        )
        opt_vib = AdamW(plug.p_enc.parameters() + plug.q_dec.parameters(), lr=0.1, weight_decay=0.5)
        joint_train_step(
            pol,
            plug,
            np.zeros((8, 3)),
            np.zeros((8, 2, 1)),
            opt_base,
            opt_vib,
            RngStream(1, "il"),
            RngStream(2, "vib"),
        )
        for p, b in zip(pol.head.parameters(), before):
            assert np.allclose(p, b * (1 - 0.1 * 0.5), atol=1e-15)

    def test_same_seed_identical_parameters(self):
        results = []
        for _ in range(2):
            pol, plug = make_pair(seed=300)
            opt_base = AdamW(pol.encoder.parameters() + pol.head.parameters())
            opt_vib = AdamW(plug.p_enc.parameters() + plug.q_dec.parameters())
            il_rng, vib_rng = RngStream(9, "il"), RngStream(9, "vib")
            data_rng = RngStream(9, "data")
            for _ in range(20):
                obs = data_rng.normal((8, 5))
                chunks = data_rng.uniform(-0.04, 0.04, (8, POL.horizon, 2))
                joint_train_step(pol, plug, obs, chunks, opt_base, opt_vib, il_rng, vib_rng)
            results.append(
                np.concatenate([p.ravel() for p in pol.head.parameters() + plug.p_enc.parameters()])
            )
        assert np.array_equal(results[0], results[1])

    def test_losses_finite_over_100_steps(self):
        pol, plug = make_pair(seed=301)
        opt_base = AdamW(pol.encoder.parameters() + pol.head.parameters(), lr=1e-3)
        opt_vib = AdamW(plug.p_enc.parameters() + plug.q_dec.parameters(), lr=1e-3)
        il_rng, vib_rng = RngStream(10, "il"), RngStream(10, "vib")
        obs = RngStream(10, "obs").normal((16, 5))
        chunks = RngStream(10, "act").uniform(-0.04, 0.04, (16, POL.horizon, 2))
        for _ in range(100):
            il, ib = joint_train_step(pol, plug, obs, chunks, opt_base, opt_vib, il_rng, vib_rng)
            assert np.isfinite(il) and np.isfinite(ib)
