"""Training orchestration and the checkpoint bundle.

Every consumer of randomness gets its own named stream derived from the run
seed, so the base path consumes identical draws whether or not the plug-in is
attached: training with and without it yields bit-identical base parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .envs import TrajectoryRecord
from .errors import ConfigError, NumericError
from .nets import AdamW, load_param_container, save_param_container
from .policy import DiffusionPolicy, Normalizer, PolicyConfig
from .rng import RngStream
from .vib import VibConfig, VibPlugin, joint_train_step


@dataclass
class TrainConfig:
    lr: float = 3e-4
    batch: int = 64
    iterations: int = 5000
    seed: int = 0
    weight_decay: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0 or self.batch < 1 or self.iterations < 0:
            raise ConfigError("train config: lr > 0, batch >= 1, iterations >= 0 required")


def build_windows(
    records: list[TrajectoryRecord], horizon: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(obs_t, actions[t:t+H]) pairs for every step of every trajectory, with
    edge padding past the end. Also returns per-episode [start, end) offsets
    so batches can sample episodes uniformly regardless of their length."""
    if not records:
        raise ConfigError("no trajectories to train on")
    obs_rows, chunk_rows, spans = [], [], []
    for rec in records:
        T = rec.actions.shape[0]
        padded = np.concatenate([rec.actions, np.repeat(rec.actions[-1:], horizon, axis=0)])
        spans.append((len(obs_rows), len(obs_rows) + T))
        for t in range(T):
            obs_rows.append(rec.observations[t])
            chunk_rows.append(padded[t : t + horizon])
    return np.stack(obs_rows), np.stack(chunk_rows), np.asarray(spans, dtype=np.int64)


@dataclass
class PolicyBundle:
    """A trained policy plus (optionally) its exploration plug-in."""

    policy: DiffusionPolicy
    plugin: VibPlugin | None
    env_name: str
    trained_iterations: int = 0
    loss_history: list = field(default_factory=list)

    def named_params(self) -> dict[str, np.ndarray]:
        params = self.policy.named_params()
        if self.plugin is not None:
            params.update(self.plugin.named_params())
        return params

    def checksum(self, prefix: str = "") -> str:
        """SHA-256 over the exact bytes of all parameters matching `prefix`."""
        params = self.named_params()
        h = hashlib.sha256()
        for name in sorted(params):
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(params[name]).tobytes())
        return h.hexdigest()

    def copy(self) -> "PolicyBundle":
        return PolicyBundle(
            policy=self.policy.copy(),
            plugin=self.plugin.copy() if self.plugin is not None else None,
            env_name=self.env_name,
            trained_iterations=self.trained_iterations,
        )

    def save(self, path: str) -> None:
        meta = {
            "env_name": self.env_name,
            "obs_dim": self.policy.obs_dim,
            "act_dim": self.policy.act_dim,
            "max_step": self.policy.max_step,
            "policy_cfg": vars(self.policy.cfg),
            "vib_cfg": vars(self.plugin.cfg) if self.plugin is not None else None,
            "norm_lo": self.policy.normalizer.lo.tolist(),
            "norm_hi": self.policy.normalizer.hi.tolist(),
            "trained_iterations": self.trained_iterations,
        }
        save_param_container(path, self.named_params(), meta)

    @classmethod
    def load(cls, path: str) -> "PolicyBundle":
        params, meta = load_param_container(path)
        pol_cfg = PolicyConfig(**meta["policy_cfg"])
        normalizer = Normalizer(
            lo=np.asarray(meta["norm_lo"], dtype=np.float64),
            hi=np.asarray(meta["norm_hi"], dtype=np.float64),
        )
        policy = DiffusionPolicy(
            meta["obs_dim"],
            meta["act_dim"],
            pol_cfg,
            normalizer=normalizer,
            max_step=meta["max_step"],
        )
        plugin = None
        if meta.get("vib_cfg") is not None:
            plugin = VibPlugin(pol_cfg.embed_dim, VibConfig(**meta["vib_cfg"]))
        bundle = cls(
            policy=policy,
            plugin=plugin,
            env_name=meta["env_name"],
            trained_iterations=int(meta.get("trained_iterations", 0)),
        )
        own = bundle.named_params()
        for name, arr in params.items():
            if name not in own:
                raise ConfigError(f"checkpoint parameter {name!r} has no home")
            if own[name].shape != arr.shape:
                raise ConfigError(f"checkpoint parameter {name!r} shape mismatch")
            own[name][...] = arr
        return bundle


def train(
    records: list[TrajectoryRecord],
    obs_dim: int,
    act_dim: int,
    pol_cfg: PolicyConfig,
    vib_cfg: VibConfig | None,
    train_cfg: TrainConfig,
    env_name: str,
    max_step: float = 0.05,
    init_bundle: PolicyBundle | None = None,
    with_vib: bool = True,
) -> PolicyBundle:
    """Train (or continue training) on the given trajectories.

    When continuing from `init_bundle` the normalizer is kept from the
    original training set so the action space stays fixed across rounds.
    """
    train_cfg.validate()
    root = RngStream(train_cfg.seed)
    obs, chunks, spans = build_windows(records, pol_cfg.horizon)
    if obs.shape[1] != obs_dim:
        raise ConfigError(f"dataset obs width {obs.shape[1]} != expected {obs_dim}")

    if init_bundle is not None:
        warm = init_bundle.copy()  # never mutate the caller's checkpoint
        policy = warm.policy
        plugin = warm.plugin if with_vib else None
        start_iter = warm.trained_iterations
    else:
        normalizer = Normalizer.from_actions(chunks.reshape(-1, act_dim))
        policy = DiffusionPolicy(
            obs_dim, act_dim, pol_cfg, rng=root, normalizer=normalizer, max_step=max_step
        )
        plugin = VibPlugin(pol_cfg.embed_dim, vib_cfg, rng=root) if (with_vib and vib_cfg) else None
        start_iter = 0

    opt_kwargs = dict(
        lr=train_cfg.lr,
        betas=train_cfg.betas,
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
    )
    opt_base = AdamW(
        policy.encoder.parameters() + policy.head.parameters(),
        names=policy.encoder.parameter_names() + policy.head.parameter_names(),
        **opt_kwargs,
    )
    opt_vib = None
    if plugin is not None:
        opt_vib = AdamW(
            plugin.p_enc.parameters() + plugin.q_dec.parameters(),
            names=plugin.p_enc.parameter_names() + plugin.q_dec.parameter_names(),
            **opt_kwargs,
        )

    batch_rng = root.child("train/batch")
    il_rng = root.child("train/il")
    vib_rng = root.child("train/vib")
    starts, ends = spans[:, 0], spans[:, 1]
    history = []
    for it in range(train_cfg.iterations):
        # uniform over episodes, then uniform within the episode: long
        # self-collected rollouts cannot drown out the expert data
        eps = batch_rng.integers(0, len(spans), train_cfg.batch)
        offs = batch_rng.integers(0, ends[eps] - starts[eps])
        idx = starts[eps] + offs
        il, ib = joint_train_step(
            policy, plugin, obs[idx], chunks[idx], opt_base, opt_vib, il_rng, vib_rng
        )
        if not (np.isfinite(il) and np.isfinite(ib)):
            raise NumericError(f"non-finite loss at iteration {it}: il={il}, ib={ib}")
        history.append((il, ib))
    return PolicyBundle(
        policy=policy,
        plugin=plugin,
        env_name=env_name,
        trained_iterations=start_iter + train_cfg.iterations,
        loss_history=history,
    )
