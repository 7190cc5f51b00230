"""Latent-bottleneck exploration plug-in around the observation embedding.

A latent encoder maps the embedding c to a diagonal Gaussian (mu, sigma); a
decoder maps latent draws back to a modified embedding c~. The plug-in loss
(reconstruction through the frozen base head + beta * KL to a standard-normal
prior) updates only the plug-in parameters: gradients are blocked at c before
the latent encoder and never reach the base encoder or head parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import add_noise
from .errors import ConfigError, ShapeError
from .nets import DenseNet
from .rng import RngStream

SIGMA_MIN = 1e-6
SIGMA_MAX = 1e3


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the bottleneck: sigma strictly positive."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class VibConfig:
    latent_dim: int = 16
    beta: float = 1e-3  # KL weight
    alpha: float = 2.0  # exploration scale
    hidden: int = 128
    threshold_db: float = 0.0  # effective-dimension cutoff

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ConfigError("vib.latent_dim must be >= 1")
        if self.beta < 0.0:
            raise ConfigError("vib.beta must be >= 0")
        if self.alpha < 0.0:
            raise ConfigError("vib.alpha must be >= 0")


class VibPlugin:
    """Latent encoder p (c -> mu, log sigma) and decoder q (z -> c~)."""

    def __init__(self, embed_dim: int, cfg: VibConfig, rng: RngStream | None = None):
        cfg.validate()
        self.cfg = cfg
        self.embed_dim = embed_dim
        d, h = cfg.latent_dim, cfg.hidden
        p_rng = rng.child("init/latenc") if rng is not None else None
        q_rng = rng.child("init/latdec") if rng is not None else None
        self.p_enc = DenseNet([embed_dim, h, h, h, 2 * d], p_rng, name="latenc")
        self.q_dec = DenseNet([d, h, h, h, embed_dim], q_rng, name="latdec")

    # ---- forward pieces --------------------------------------------------

    def _split(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = self.cfg.latent_dim
        mu = out[..., :d]
        logsig = out[..., d:]
        sig_raw = np.exp(logsig)
        sigma = np.clip(sig_raw, SIGMA_MIN, SIGMA_MAX)
        return mu, sigma, sig_raw

    def encode_latent(self, c: np.ndarray) -> LatentGaussian:
        mu, sigma, _ = self._split(self.p_enc.forward(c))
        return LatentGaussian(mu=mu, sigma=sigma)

    def decode_latent(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeError(f"latent width {z.shape[-1]} != {self.cfg.latent_dim}")
        return self.q_dec.forward(z)

    def explore_embedding(
        self, c: np.ndarray, alpha: float, rng: RngStream | None
    ) -> tuple[np.ndarray, np.ndarray, LatentGaussian]:
        """Perturb on-manifold: z ~ N(mu, (alpha sigma)^2), c~ = decode(z)."""
        if alpha < 0.0:
            raise ConfigError("alpha must be >= 0")
        g = self.encode_latent(c)
        if alpha == 0.0:
            z = g.mu.copy()
        else:
            if rng is None:
                raise ConfigError("explore_embedding with alpha > 0 needs an rng")
            z = g.mu + alpha * g.sigma * rng.normal(g.mu.shape)
        return self.decode_latent(z), z, g

    # ---- training --------------------------------------------------------

    def vib_loss(
        self, policy, obs: np.ndarray, chunks: np.ndarray, rng: RngStream
    ) -> tuple[float, float, dict[str, list[np.ndarray]]]:
        """Reconstruction-through-frozen-head + beta*KL; grads for p/q only.

        Returns (total, kl_term, grads). grads carries exact-zero entries for
        the base-path nets so the isolation contract is directly checkable.
        """
        obs = np.asarray(obs, dtype=np.float64)
        chunks = np.asarray(chunks, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ShapeError("vib_loss needs a nonempty (B, obs_dim) batch")
        B = obs.shape[0]
        beta = self.cfg.beta
        a0 = policy.normalizer.encode(chunks).reshape(B, policy.chunk_elems)
        k = rng.integers(1, policy.sched.K + 1, B)
        eps = rng.normal((B, policy.chunk_elems))
        a_k = add_noise(a0, eps, k, policy.sched)

        c = policy.encoder.forward(obs)  # detached: gradient stops here
        p_out = self.p_enc.forward(c)
        mu, sigma, sig_raw = self._split(p_out)
        eps_z = rng.normal(mu.shape)
        z = mu + sigma * eps_z
        c_tilde = self.q_dec.forward(z)
        pred = policy.head.forward(policy._head_input(a_k, c_tilde, k))

        resid = pred - eps
        recon = float(np.sum(resid * resid) / B)
        logsig = np.log(np.maximum(sigma, SIGMA_MIN))
        kl = float(0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * logsig) / B)
        total = recon + beta * kl

        # Backward: through the head into c~ only; head/encoder grads discarded.
        _, dinput = policy.head.backward(2.0 * resid / B)
        dct = dinput[:, policy.chunk_elems : policy.chunk_elems + self.embed_dim]
        q_grads, dz = self.q_dec.backward(dct)
        dmu = dz + beta * mu / B
        dsigma = dz * eps_z + beta * (sigma - 1.0 / sigma) / B
        clamp_mask = (sig_raw >= SIGMA_MIN) & (sig_raw <= SIGMA_MAX)
        dlogsig = dsigma * sigma * clamp_mask
        p_grads, _ = self.p_enc.backward(np.concatenate([dmu, dlogsig], axis=-1))
        grads = {
            "latenc": p_grads,
            "latdec": q_grads,
            "encoder": policy.encoder.zero_grads(),
            "head": policy.head.zero_grads(),
        }
        return total, kl, grads

    def copy(self) -> "VibPlugin":
        dup = VibPlugin(self.embed_dim, self.cfg)
        dup.p_enc = self.p_enc.copy()
        dup.q_dec = self.q_dec.copy()
        return dup

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for net in (self.p_enc, self.q_dec):
            for name, p in zip(net.parameter_names(), net.parameters()):
                out[f"vib/{name}"] = p
        return out


def joint_train_step(
    policy,
    plugin: VibPlugin | None,
    obs: np.ndarray,
    chunks: np.ndarray,
    opt_base,
    opt_vib,
    rng_il: RngStream,
    rng_vib: RngStream | None,
) -> tuple[float, float]:
    """One step on the base path from the imitation loss, then one step on the
    plug-in from the bottleneck loss. Returns (il_loss, ib_loss)."""
    il_loss, il_grads = policy.imitation_loss(obs, chunks, rng_il)
    opt_base.step(il_grads["encoder"] + il_grads["head"])
    ib_loss = 0.0
    if plugin is not None:
        ib_loss, _, ib_grads = plugin.vib_loss(policy, obs, chunks, rng_vib)
        opt_vib.step(ib_grads["latenc"] + ib_grads["latdec"])
    return il_loss, ib_loss
