"""Training orchestration: windows, determinism, isolation, checkpoints."""

import numpy as np
import pytest

from manex.envs import TrajectoryRecord, generate_demos, make_env_config
from manex.errors import ConfigError
from manex.policy import PolicyConfig
from manex.rng import RngStream
from manex.trainer import PolicyBundle, TrainConfig, build_windows, train
from manex.vib import VibConfig

POL = PolicyConfig(horizon=4, diffusion_steps=8, ddim_steps=4, embed_dim=16, hidden=24, time_dim=8)
VIB = VibConfig(latent_dim=4, hidden=16)
ENV = make_env_config("planar-reach", expert_bias=0.9)


def tiny_train(with_vib=True, seed=0, iterations=60, records=None):
    records = records or generate_demos(ENV, 3, seed=5)
    return train(
        records,
        ENV.obs_dim,
        ENV.act_dim,
        POL,
        VIB,
        TrainConfig(batch=16, iterations=iterations, seed=seed),
        env_name=ENV.name,
        max_step=ENV.max_step,
        with_vib=with_vib,
    )


class TestBuildWindows:
    def test_shapes_and_padding(self):
        rec = TrajectoryRecord(
            observations=np.arange(12.0).reshape(6, 2),
            actions=np.arange(12.0).reshape(6, 2),
            success=True,
            source="expert",
            env="toy",
            seed=0,
        )
        obs, chunks, spans = build_windows([rec], horizon=4)
        assert obs.shape == (6, 2) and chunks.shape == (6, 4, 2)
        assert spans.tolist() == [[0, 6]]
        # the final window repeats the last action
        assert np.array_equal(chunks[-1], np.tile(rec.actions[-1], (4, 1)))
        assert np.array_equal(chunks[0], rec.actions[:4])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            build_windows([], 4)


class TestTrainLoop:
    def test_losses_finite_and_decreasing(self):
        bundle = tiny_train(iterations=150)
        il = [h[0] for h in bundle.loss_history]
        assert all(np.isfinite(v) for v in il)
        assert np.mean(il[-30:]) < np.mean(il[:30])

    def test_base_path_identical_with_and_without_plugin(self):
        a = tiny_train(with_vib=True, seed=7)
        b = tiny_train(with_vib=False, seed=7)
        assert a.plugin is not None and b.plugin is None
        assert a.checksum("policy/") == b.checksum("policy/")

    def test_two_runs_same_seed_identical(self):
        a = tiny_train(seed=9)
        b = tiny_train(seed=9)
        assert a.checksum() == b.checksum()

    def test_different_seeds_differ(self):
        a = tiny_train(seed=1)
        b = tiny_train(seed=2)
        assert a.checksum() != b.checksum()


class TestCheckpoint:
    def test_roundtrip_with_plugin(self, tmp_path):
        bundle = tiny_train(iterations=30)
        path = str(tmp_path / "ckpt.json")
        bundle.save(path)
        loaded = PolicyBundle.load(path)
        assert loaded.checksum() == bundle.checksum()
        assert loaded.plugin is not None
        assert loaded.env_name == ENV.name
        assert loaded.trained_iterations == 30
        obs = np.full(ENV.obs_dim, 0.4)
        a = bundle.policy.act(obs, rng=RngStream(3, "cmp"))
        b = loaded.policy.act(obs, rng=RngStream(3, "cmp"))
        assert np.array_equal(a, b)

    def test_roundtrip_without_plugin(self, tmp_path):
        bundle = tiny_train(with_vib=False, iterations=30)
        path = str(tmp_path / "ckpt.json")
        bundle.save(path)
        loaded = PolicyBundle.load(path)
        assert loaded.plugin is None
        assert loaded.checksum("policy/") == bundle.checksum("policy/")

    def test_plugin_namespace_is_separate(self, tmp_path):
        bundle = tiny_train(iterations=10)
        names = set(bundle.named_params())
        assert any(n.startswith("policy/") for n in names)
        assert any(n.startswith("vib/") for n in names)

    def test_resume_continues_counter(self):
        first = tiny_train(iterations=40)
        more = train(
            generate_demos(ENV, 3, seed=5),
            ENV.obs_dim,
            ENV.act_dim,
            POL,
            VIB,
            TrainConfig(batch=16, iterations=20, seed=123),
            env_name=ENV.name,
            max_step=ENV.max_step,
            init_bundle=first,
        )
        assert more.trained_iterations == 60
