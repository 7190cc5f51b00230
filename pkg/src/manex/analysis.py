"""Latent-space and trajectory analytics.

Pure functions: SNR spectrum over latent dimensions, effective-dimension
detection, farthest point sampling, average jerk, Pass@k, and batched action
proposals along a single latent dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import RngStream
from .vib import LatentGaussian

SNR_DB_FLOOR = -300.0  # stands in for -inf when the ratio is exactly 0


@dataclass
class SnrSpectrum:
    snr: np.ndarray  # per-dimension Var(mu_i) / E[sigma_i^2]
    snr_db: np.ndarray  # 10*log10(snr), floored at SNR_DB_FLOOR
    samples: int

    def to_dict(self, threshold_db: float = 0.0) -> dict:
        eff = effective_dimensions(self, threshold_db)
        return {
            "dims": [
                {
                    "index": i,
                    "snr": float(self.snr[i]),
                    "snr_db": float(self.snr_db[i]),
                    "effective": i in eff,
                }
                for i in range(len(self.snr))
            ],
            "threshold_db": threshold_db,
            "samples": self.samples,
        }


def compute_snr(samples: list[LatentGaussian]) -> SnrSpectrum:
    """Per-dimension Var(mu) / E[sigma^2] over a population of latents."""
    if len(samples) < 2:
        raise ShapeError("compute_snr needs at least 2 samples")
    mu = np.stack([np.asarray(s.mu, dtype=np.float64) for s in samples])
    sig = np.stack([np.asarray(s.sigma, dtype=np.float64) for s in samples])
    var_mu = mu.var(axis=0)  # population variance
    mean_s2 = (sig * sig).mean(axis=0)
    snr = var_mu / mean_s2
    with np.errstate(divide="ignore"):
        snr_db = np.where(snr > 0.0, 10.0 * np.log10(np.maximum(snr, 1e-300)), SNR_DB_FLOOR)
    snr_db = np.maximum(snr_db, SNR_DB_FLOOR)
    return SnrSpectrum(snr=snr, snr_db=snr_db, samples=len(samples))


def effective_dimensions(spec: SnrSpectrum, threshold_db: float = 0.0) -> set[int]:
    """Indices whose SNR in dB strictly exceeds the threshold."""
    return {int(i) for i in np.nonzero(spec.snr_db > threshold_db)[0]}


def farthest_point_sampling(points: np.ndarray, k: int, start: int = 0) -> list[int]:
    """Greedy max-min subset: each pick maximizes the min squared Euclidean
    distance to everything already picked; ties break to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise ShapeError(f"k must be in 1..{n}, got {k}")
    if start < 0 or start >= n:
        raise ShapeError(f"start must be in 0..{n - 1}, got {start}")
    picked = [int(start)]
    mind = np.sum((pts - pts[start]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))  # argmax returns the first (lowest) index on ties
        picked.append(nxt)
        mind = np.minimum(mind, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return picked


def average_jerk(positions: np.ndarray, dt: float) -> float:
    """Mean norm of the discrete third derivative of a T x D position track."""
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    T = p.shape[0]
    if T < 4:
        raise ShapeError(f"average_jerk needs T >= 4 positions, got {T}")
    d3 = (p[3:] - 3.0 * p[2:-1] + 3.0 * p[1:-2] - p[:-3]) / dt**3
    return float(np.mean(np.linalg.norm(d3, axis=1)))


def pass_at_k(outcomes: list[list[bool]], k: int) -> float:
    """Fraction of start conditions with >= 1 success in the first k attempts."""
    if not outcomes:
        raise ShapeError("pass_at_k needs at least one start condition")
    for i, attempts in enumerate(outcomes):
        if len(attempts) < k:
            raise ShapeError(f"start {i} has {len(attempts)} attempts < k={k}")
    hits = sum(1 for attempts in outcomes if any(attempts[:k]))
    return hits / len(outcomes)


@dataclass
class Proposal:
    proposal_id: int
    offset: float  # z[dim] displacement in units of sigma[dim]
    chunk: np.ndarray  # (H, act_dim) env units
    trajectory: np.ndarray  # (T, 2) simulated end-effector positions


@dataclass
class ProposalSet:
    dim: int
    proposals: list[Proposal]


def propose_along_dimension(
    policy,
    plugin,
    obs: np.ndarray,
    dim: int,
    simulate,
    batch: int = 64,
    k: int = 8,
    span: float = 3.0,
    rng: RngStream | None = None,
    init_noise: np.ndarray | None = None,
) -> ProposalSet:
    """Sweep one latent dimension and keep a diverse subset of the results.

    z = mu except z[dim] = mu[dim] + s * sigma[dim] for s evenly spaced in
    [-span, span]; each z decodes to a chunk which `simulate` turns into a
    trajectory. FPS over flattened trajectories picks k of them, seeded at the
    proposal whose endpoint is farthest from the mean endpoint. All proposals
    share one DDIM initial noise so s=0 reproduces the alpha=0 action.
    """
    d = plugin.cfg.latent_dim
    if dim < 0 or dim >= d:
        raise ShapeError(f"dim must be in 0..{d - 1}, got {dim}")
    if batch < k:
        raise ShapeError(f"batch ({batch}) must be >= k ({k})")
    c = policy.encode_observation(obs)
    g = plugin.encode_latent(c)
    if init_noise is None:
        if rng is None:
            raise ShapeError("propose_along_dimension needs an rng or init_noise")
        init_noise = rng.normal(policy.chunk_elems)
    offsets = np.linspace(-span, span, batch) if batch > 1 else np.array([0.0])
    chunks = []
    trajs = []
    for s in offsets:
        z = g.mu.copy()
        z[dim] = g.mu[dim] + s * g.sigma[dim]
        c_tilde = plugin.decode_latent(z)
        chunk = policy.act(obs, init_noise=init_noise, embedding=c_tilde)
        chunks.append(chunk)
        trajs.append(np.asarray(simulate(chunk), dtype=np.float64))
    flat = np.stack([t.ravel() for t in trajs])
    ends = np.stack([t[-1] for t in trajs])
    start = int(np.argmax(np.sum((ends - ends.mean(axis=0)) ** 2, axis=1)))
    order = farthest_point_sampling(flat, k, start=start)
    proposals = [
        Proposal(proposal_id=i, offset=float(offsets[j]), chunk=chunks[j], trajectory=trajs[j])
        for i, j in enumerate(order)
    ]
    return ProposalSet(dim=dim, proposals=proposals)
