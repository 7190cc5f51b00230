"""Chunked-action diffusion policy: observation encoder + noise-prediction head.

Actions are predicted in a normalized space (per-dimension min/max of the
training set mapped to [-1, 1]) and clipped back to the per-step action
bounds on the way out. Sampling is deterministic DDIM (eta = 0): identical
(parameters, observation, rng seed) give bit-identical chunks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, add_noise, ddim_step, ddim_step_list, make_schedule, time_embedding
from .errors import ConfigError, ShapeError
from .nets import DenseNet
from .rng import RngStream

_SPAN_FLOOR = 1e-6


@dataclass
class Normalizer:
    """Per-dimension affine map between env action units and [-1, 1].

    Degenerate dimensions (hi == lo) map to the interval center.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_actions(cls, actions: np.ndarray) -> "Normalizer":
        a = np.asarray(actions, dtype=np.float64).reshape(-1, actions.shape[-1])
        return cls(lo=a.min(axis=0), hi=a.max(axis=0))

    def _center_half(self) -> tuple[np.ndarray, np.ndarray]:
        center = (self.hi + self.lo) / 2.0
        half = np.maximum((self.hi - self.lo) / 2.0, _SPAN_FLOOR)
        return center, half

    def encode(self, a: np.ndarray) -> np.ndarray:
        center, half = self._center_half()
        return (np.asarray(a, dtype=np.float64) - center) / half

    def decode(self, x: np.ndarray) -> np.ndarray:
        center, half = self._center_half()
        return np.asarray(x, dtype=np.float64) * half + center


@dataclass
class PolicyConfig:
    horizon: int = 8  # chunk length H
    diffusion_steps: int = 16  # train-time K
    ddim_steps: int = 8
    embed_dim: int = 64
    hidden: int = 64
    time_dim: int = 16
    schedule: str = "squaredcos"

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("policy.horizon must be >= 1")
        if self.ddim_steps < 1 or self.ddim_steps > self.diffusion_steps:
            raise ConfigError("policy.ddim_steps must be in 1..diffusion_steps")
        if self.embed_dim < 1 or self.hidden < 1:
            raise ConfigError("policy.embed_dim and policy.hidden must be >= 1")


class DiffusionPolicy:
    """Base imitation policy: c = encoder(o), eps_hat = head(a_k, c, k)."""

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        cfg: PolicyConfig,
        rng: RngStream | None = None,
        normalizer: Normalizer | None = None,
        max_step: float = 0.05,
    ):
        cfg.validate()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg = cfg
        self.max_step = float(max_step)
        self.chunk_elems = cfg.horizon * act_dim
        self.sched: NoiseSchedule = make_schedule(cfg.diffusion_steps, cfg.schedule)
        enc_rng = rng.child("init/encoder") if rng is not None else None
        head_rng = rng.child("init/head") if rng is not None else None
        self.encoder = DenseNet(
            [obs_dim, cfg.hidden, cfg.hidden, cfg.embed_dim], enc_rng, name="encoder"
        )
        head_in = self.chunk_elems + cfg.embed_dim + cfg.time_dim
        self.head = DenseNet(
            [head_in, 2 * cfg.hidden, 2 * cfg.hidden, self.chunk_elems], head_rng, name="head"
        )
        self.normalizer = normalizer or Normalizer(
            lo=-max_step * np.ones(act_dim), hi=max_step * np.ones(act_dim)
        )

    # ---- forward pieces -------------------------------------------------

    def encode_observation(self, o: np.ndarray) -> np.ndarray:
        o = np.asarray(o, dtype=np.float64)
        if o.shape[-1] != self.obs_dim:
            raise ShapeError(f"observation width {o.shape[-1]} != {self.obs_dim}")
        return self.encoder.forward(o)

    def _head_input(self, a_k: np.ndarray, c: np.ndarray, k) -> np.ndarray:
        temb = time_embedding(k, self.cfg.time_dim)
        if a_k.ndim == 1:
            return np.concatenate([a_k, c, temb])
        if temb.ndim == 1:
            temb = np.broadcast_to(temb, (a_k.shape[0], temb.shape[0]))
        if c.ndim == 1:
            c = np.broadcast_to(c, (a_k.shape[0], c.shape[0]))
        return np.concatenate([a_k, c, temb], axis=1)

    def predict_noise(self, a_k: np.ndarray, c: np.ndarray, k) -> np.ndarray:
        """Noise estimate for a (flattened, normalized) noisy chunk at step k."""
        a_k = np.asarray(a_k, dtype=np.float64)
        if a_k.shape[-1] != self.chunk_elems:
            raise ShapeError(f"chunk width {a_k.shape[-1]} != {self.chunk_elems}")
        return self.head.forward(self._head_input(a_k, c, k))

    # ---- sampling --------------------------------------------------------

    def ddim_sample(
        self,
        c: np.ndarray,
        rng: RngStream | None = None,
        steps: int | None = None,
        init_noise: np.ndarray | None = None,
    ) -> np.ndarray:
        """Deterministic DDIM chunk in normalized space, shape (H, act_dim).

        The initial x_K comes from `init_noise` if given, else from `rng`.
        """
        steps = steps or self.cfg.ddim_steps
        if init_noise is None:
            if rng is None:
                raise ConfigError("ddim_sample needs an rng or explicit init_noise")
            init_noise = rng.normal(self.chunk_elems)
        x = np.asarray(init_noise, dtype=np.float64).reshape(self.chunk_elems)
        ks = ddim_step_list(self.sched.K, steps)
        x0 = x
        for k, k_next in zip(ks[:-1], ks[1:]):
            eps_hat = self.predict_noise(x, c, k)
            x, x0 = ddim_step(x, eps_hat, k, k_next, self.sched)
        return x0.reshape(self.cfg.horizon, self.act_dim)

    def act(
        self,
        obs: np.ndarray,
        rng: RngStream | None = None,
        init_noise: np.ndarray | None = None,
        embedding: np.ndarray | None = None,
    ) -> np.ndarray:
        """Action chunk in env units, clipped to the per-step bounds."""
        c = self.encode_observation(obs) if embedding is None else embedding
        x = self.ddim_sample(c, rng=rng, init_noise=init_noise)
        chunk = self.normalizer.decode(x)
        return np.clip(chunk, -self.max_step, self.max_step)

    # ---- training --------------------------------------------------------

    def imitation_loss(
        self, obs: np.ndarray, chunks: np.ndarray, rng: RngStream
    ) -> tuple[float, dict[str, list[np.ndarray]]]:
        """Mean over the batch of ||eps - eps_hat||^2, with gradients for
        encoder and head only.

        obs: (B, obs_dim); chunks: (B, H, act_dim) in env units.
        """
        obs = np.asarray(obs, dtype=np.float64)
        chunks = np.asarray(chunks, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ShapeError("imitation_loss needs a nonempty (B, obs_dim) batch")
        B = obs.shape[0]
        a0 = self.normalizer.encode(chunks).reshape(B, self.chunk_elems)
        k = np.asarray(rng.integers(1, self.sched.K + 1, B))
        eps = rng.normal((B, self.chunk_elems))
        a_k = add_noise(a0, eps, k, self.sched)
        c = self.encoder.forward(obs)
        pred = self.head.forward(self._head_input(a_k, c, k))
        resid = pred - eps
        loss = float(np.sum(resid * resid) / B)
        head_grads, dinput = self.head.backward(2.0 * resid / B)
        dc = dinput[:, self.chunk_elems : self.chunk_elems + self.cfg.embed_dim]
        enc_grads, _ = self.encoder.backward(dc)
        return loss, {"encoder": enc_grads, "head": head_grads}

    def copy(self) -> "DiffusionPolicy":
        dup = DiffusionPolicy(
            self.obs_dim,
            self.act_dim,
            self.cfg,
            normalizer=Normalizer(lo=self.normalizer.lo.copy(), hi=self.normalizer.hi.copy()),
            max_step=self.max_step,
        )
        dup.encoder = self.encoder.copy()
        dup.head = self.head.copy()
        return dup

    # ---- parameter container --------------------------------------------

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for net in (self.encoder, self.head):
            for name, p in zip(net.parameter_names(), net.parameters()):
                out[f"policy/{name}"] = p
        return out
