"""Noise schedules and the deterministic DDIM update rule.

Schedules index diffusion steps k = 1..K, with alpha_bar[0] = 1 by
convention so that step 0 is the clean signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class NoiseSchedule:
    kind: str
    K: int
    betas: np.ndarray  # (K,) for steps 1..K
    alpha_bar: np.ndarray  # (K+1,), alpha_bar[0] == 1.0


def make_schedule(K: int, kind: str = "squaredcos") -> NoiseSchedule:
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, K)
    elif kind == "squaredcos":
        # alpha_bar(t) = cos^2(((t/K + s) / (1 + s)) * pi/2), s = 0.008
        s = 0.008
        t = np.arange(K + 1, dtype=np.float64) / K
        ab = np.cos(((t + s) / (1.0 + s)) * np.pi / 2.0) ** 2
        ab = ab / ab[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(kind=kind, K=K, betas=betas, alpha_bar=alpha_bar)


def add_noise(a0: np.ndarray, eps: np.ndarray, k, sched: NoiseSchedule) -> np.ndarray:
    """Forward-noise a clean signal: a^k = sqrt(ab_k) a0 + sqrt(1-ab_k) eps.

    `k` may be a scalar step or a per-row array when a0 is batched.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise ShapeError(f"a0 shape {a0.shape} != eps shape {eps.shape}")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > sched.K):
        raise IndexError(f"diffusion step out of range 1..{sched.K}")
    ab = sched.alpha_bar[k]
    if k.ndim == 1:  # per-row steps on a batch
        ab = ab.reshape((-1,) + (1,) * (a0.ndim - 1))
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def time_embedding(k, dim: int = 16) -> np.ndarray:
    """Fixed sinusoidal code for the diffusion step, concatenated to head input."""
    if dim % 2 != 0:
        raise ConfigError("time embedding dim must be even")
    scalar = np.ndim(k) == 0
    karr = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = karr[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return emb[0] if scalar else emb


def ddim_step_list(K: int, steps: int) -> list[int]:
    """Descending step sequence ending at 0, e.g. K=16, steps=8 -> [16,14,...,2,0]."""
    if steps < 1 or steps > K:
        raise ConfigError(f"steps must be in 1..{K}, got {steps}")
    ks = np.unique(np.round(np.linspace(K, 0, steps + 1)).astype(int))[::-1]
    return [int(v) for v in ks]


def ddim_step(
    x: np.ndarray,
    eps_hat: np.ndarray,
    k: int,
    k_next: int,
    sched: NoiseSchedule,
    clip: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """One eta=0 DDIM update from step k to k_next (< k). Returns (x_next, x0_hat)."""
    ab_k = sched.alpha_bar[k]
    ab_n = sched.alpha_bar[k_next]
    x0 = (x - np.sqrt(1.0 - ab_k) * eps_hat) / np.sqrt(ab_k)
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
    x_next = np.sqrt(ab_n) * x0 + np.sqrt(1.0 - ab_n) * eps_hat
    return x_next, x0
