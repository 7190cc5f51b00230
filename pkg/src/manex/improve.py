"""Self-improvement rounds: explore, filter successes, aggregate, retrain.

Start seeds for exploration are derived from the plan seed; evaluation uses a
fixed held-out block (EVAL_SEED_BASE) disjoint from any exploration seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import average_jerk, compute_snr, pass_at_k
from .envs import EnvConfig, PlanarEnv, TrajectoryRecord
from .errors import ConfigError
from .rng import RngStream
from .trainer import PolicyBundle, TrainConfig, train
from .vib import LatentGaussian

EVAL_SEED_BASE = 900_000_000
MODES = ("base", "explore", "cond-noise")


@dataclass
class RoundPlan:
    starts: int = 20
    attempts: int = 5
    alpha: float = 2.0
    budget: int | None = None  # max episodes; default starts * attempts
    retrain_iters: int | None = None  # default: half the base iterations
    retrain_lr: float | None = None  # default: the base learning rate
    cap: int = 20  # successes merged per round
    seed: int = 0
    mode: str = "explore"
    eval_episodes: int = 100
    from_scratch: bool = False
    seed_base: int | None = None  # explicit start-seed block (e.g. the eval block)

    def validate(self) -> None:
        if self.attempts < 1:
            raise ConfigError("plan.attempts must be >= 1")
        if self.starts < 1:
            raise ConfigError("plan.starts must be >= 1")
        if self.max_budget < self.starts:
            raise ConfigError("plan.budget must be >= plan.starts")
        if self.mode not in MODES:
            raise ConfigError(f"plan.mode must be one of {MODES}")
        if self.cap < 0:
            raise ConfigError("plan.cap must be >= 0")

    @property
    def max_budget(self) -> int:
        return self.budget if self.budget is not None else self.starts * self.attempts

    def start_seed(self, i: int) -> int:
        if self.seed_base is not None:
            return self.seed_base + i
        return self.seed * 10_000 + i


@dataclass
class ImprovementRoundReport:
    round_index: int
    mode: str
    alpha: float
    success_before: float
    success_after: float
    pass_at_5: float
    avg_jerk: float
    rollouts_used: int
    successes_collected: int
    zero_success: bool
    relative_improvement: float | None
    snr: dict | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "mode": self.mode,
            "alpha": self.alpha,
            "success_before": self.success_before,
            "success_after": self.success_after,
            "pass_at_5": self.pass_at_5,
            "avg_jerk": self.avg_jerk,
            "rollouts_used": self.rollouts_used,
            "successes_collected": self.successes_collected,
            "zero_success": self.zero_success,
            "relative_improvement": self.relative_improvement,
            "snr": self.snr,
        }


def plan_chunk(
    bundle: PolicyBundle,
    obs: np.ndarray,
    mode: str,
    alpha: float,
    noise_rng: RngStream,
    z_rng: RngStream | None = None,
    cond_noise_std: np.ndarray | None = None,
) -> np.ndarray:
    """One action chunk under the given exploration mode.

    DDIM initial noise always comes from `noise_rng`; latent or conditioning
    perturbations come from `z_rng`. Shared by rollout collection and the
    steering service so both produce identical chunks for identical streams.
    """
    policy = bundle.policy
    init_noise = noise_rng.normal(policy.chunk_elems)
    if mode == "base":
        return policy.act(obs, init_noise=init_noise)
    if mode == "explore":
        if bundle.plugin is None:
            raise ConfigError("explore mode needs a checkpoint with the exploration plug-in")
        c = policy.encode_observation(obs)
        c_tilde, _, _ = bundle.plugin.explore_embedding(c, alpha, z_rng)
        return policy.act(obs, init_noise=init_noise, embedding=c_tilde)
    if mode == "cond-noise":
        if cond_noise_std is None:
            raise ConfigError("cond-noise mode needs per-dimension embedding stds")
        c = policy.encode_observation(obs)
        c_tilde = c + alpha * cond_noise_std * z_rng.normal(c.shape)
        return policy.act(obs, init_noise=init_noise, embedding=c_tilde)
    raise ConfigError(f"unknown mode {mode!r}")


def run_episode(
    bundle: PolicyBundle,
    env_cfg: EnvConfig,
    start_seed: int,
    mode: str,
    alpha: float,
    noise_rng: RngStream,
    z_rng: RngStream | None = None,
    cond_noise_std: np.ndarray | None = None,
    source: str = "rollout",
    round_index: int = 0,
) -> tuple[TrajectoryRecord, np.ndarray]:
    """Roll one episode, re-planning a chunk every H steps.

    Returns the trajectory record and the (T+1, 2) robot position track."""
    env = PlanarEnv(env_cfg)
    obs = env.reset(start_seed)
    observations, actions = [], []
    positions = [env.state.robot.copy()]
    done = False
    success = False
    while not done:
        chunk = plan_chunk(bundle, obs, mode, alpha, noise_rng, z_rng, cond_noise_std)
        for a in chunk:
            observations.append(obs)
            actions.append(a)
            obs, done, success = env.step(a)
            positions.append(env.state.robot.copy())
            if done:
                break
    rec = TrajectoryRecord(
        observations=np.stack(observations),
        actions=np.stack(actions),
        success=success,
        source=source,
        env=env_cfg.name,
        seed=start_seed,
        round=round_index,
    )
    return rec, np.stack(positions)


def embedding_std(bundle: PolicyBundle, records: list[TrajectoryRecord]) -> np.ndarray:
    """Per-dimension std of the observation embedding over a dataset."""
    rows = np.concatenate([r.observations for r in records])
    emb = bundle.policy.encode_observation(rows)
    return emb.std(axis=0)


def collect_rollouts(
    bundle: PolicyBundle,
    env_cfg: EnvConfig,
    plan: RoundPlan,
    mode: str | None = None,
    cond_noise_std: np.ndarray | None = None,
    round_index: int = 0,
) -> tuple[list[TrajectoryRecord], list[list[bool]], float, int]:
    """Up to `attempts` episodes per start seed, within the episode budget.

    Returns (records, per-start outcome lists, mean jerk, episodes executed).
    Base mode reuses one noise stream per start, so repeated attempts from an
    identical start are identical episodes.
    """
    mode = mode or plan.mode
    plan.validate()
    if env_cfg.obs_dim != bundle.policy.obs_dim:
        raise ConfigError(
            f"checkpoint expects obs width {bundle.policy.obs_dim}, env provides {env_cfg.obs_dim}"
        )
    if env_cfg.horizon < bundle.policy.cfg.horizon:
        raise ConfigError("env horizon shorter than the policy chunk")
    records: list[TrajectoryRecord] = []
    outcomes: list[list[bool]] = []
    jerks: list[float] = []
    used = 0
    dt = 1.0 / env_cfg.control_hz
    for i in range(plan.starts):
        if used >= plan.max_budget:
            break
        start_seed = plan.start_seed(i)
        row: list[bool] = []
        for j in range(plan.attempts):
            if used >= plan.max_budget:
                break
            if mode == "base":
                noise_rng = RngStream(plan.seed, f"collect/base/start{i}")
                z_rng = None
            else:
                tag = f"collect/{mode}/start{i}/att{j}"
                noise_rng = RngStream(plan.seed, f"{tag}/ddim")
                z_rng = RngStream(plan.seed, f"{tag}/z")
            rec, positions = run_episode(
                bundle,
                env_cfg,
                start_seed,
                mode,
                plan.alpha,
                noise_rng,
                z_rng,
                cond_noise_std,
                round_index=round_index,
            )
            records.append(rec)
            row.append(rec.success)
            if positions.shape[0] >= 4:
                jerks.append(average_jerk(positions, dt))
            used += 1
        outcomes.append(row)
    mean_jerk = float(np.mean(jerks)) if jerks else 0.0
    return records, outcomes, mean_jerk, used


def filter_successes(records: list[TrajectoryRecord]) -> list[TrajectoryRecord]:
    """Rejection-sampling filter: keep only successful rollouts."""
    return [r for r in records if r.success]


def first_success_per_start(records: list[TrajectoryRecord]) -> list[TrajectoryRecord]:
    """Keep each start condition's first success, in collection order.

    Repeated attempts from one start are near-duplicates; merging them all
    would let a handful of easy starts dominate the retraining set."""
    seen: set[int] = set()
    out = []
    for r in records:
        if r.success and r.seed not in seen:
            seen.add(r.seed)
            out.append(r)
    return out


def aggregate_dataset(
    expert: list[TrajectoryRecord],
    collected: list[TrajectoryRecord],
    cap: int = 0,
) -> list[TrajectoryRecord]:
    """Expert data plus at most `cap` collected records (0 = unlimited),
    kept in first-collected order."""
    if cap < 0:
        raise ConfigError("cap must be >= 0")
    keep = collected if cap == 0 else collected[:cap]
    return list(expert) + list(keep)


def evaluate(
    bundle: PolicyBundle,
    env_cfg: EnvConfig,
    episodes: int = 100,
    seed_base: int = EVAL_SEED_BASE,
) -> dict:
    """Deterministic base-path evaluation on the held-out seed block."""
    successes = 0
    jerks = []
    dt = 1.0 / env_cfg.control_hz
    for i in range(episodes):
        noise_rng = RngStream(seed_base + i, "eval/ddim")
        rec, positions = run_episode(
            bundle, env_cfg, seed_base + i, "base", 0.0, noise_rng, source="rollout"
        )
        successes += int(rec.success)
        if positions.shape[0] >= 4:
            jerks.append(average_jerk(positions, dt))
    return {
        "episodes": episodes,
        "success_rate": successes / episodes,
        "avg_jerk": float(np.mean(jerks)) if jerks else 0.0,
    }


def _snr_snapshot(bundle: PolicyBundle, records: list[TrajectoryRecord], cap: int = 2000):
    if bundle.plugin is None:
        return None
    rows = np.concatenate([r.observations for r in records])
    if rows.shape[0] > cap:
        stride = rows.shape[0] // cap + 1
        rows = rows[::stride]
    emb = bundle.policy.encode_observation(rows)
    g = bundle.plugin.encode_latent(emb)
    samples = [LatentGaussian(mu=g.mu[i], sigma=g.sigma[i]) for i in range(rows.shape[0])]
    return compute_snr(samples).to_dict(bundle.plugin.cfg.threshold_db)


def run_round(
    bundle: PolicyBundle,
    dataset: list[TrajectoryRecord],
    plan: RoundPlan,
    env_cfg: EnvConfig,
    train_cfg: TrainConfig,
    round_index: int = 1,
) -> tuple[PolicyBundle, list[TrajectoryRecord], ImprovementRoundReport]:
    """One improvement round: evaluate, explore, filter, aggregate, retrain,
    evaluate again. Returns (new bundle, new aggregated dataset, report)."""
    plan.validate()
    before = evaluate(bundle, env_cfg, plan.eval_episodes)
    cond_std = embedding_std(bundle, dataset) if plan.mode == "cond-noise" else None
    records, outcomes, mean_jerk, used = collect_rollouts(
        bundle, env_cfg, plan, cond_noise_std=cond_std, round_index=round_index
    )
    k = min(5, plan.attempts)
    full_rows = [row for row in outcomes if len(row) >= k]
    p5 = pass_at_k(full_rows, k) if full_rows else 0.0
    successes = filter_successes(records)
    snr = _snr_snapshot(bundle, dataset)
    if successes:
        merged = aggregate_dataset(dataset, first_success_per_start(successes), plan.cap)
        iters = plan.retrain_iters if plan.retrain_iters is not None else train_cfg.iterations // 2
        lr = plan.retrain_lr if plan.retrain_lr is not None else train_cfg.lr
        retrain_cfg = replace(
            train_cfg, iterations=iters, lr=lr, seed=train_cfg.seed + 7919 * round_index
        )
        new_bundle = train(
            merged,
            bundle.policy.obs_dim,
            bundle.policy.act_dim,
            bundle.policy.cfg,
            bundle.plugin.cfg if bundle.plugin else None,
            retrain_cfg,
            env_name=bundle.env_name,
            max_step=bundle.policy.max_step,
            init_bundle=None if plan.from_scratch else bundle,
            with_vib=bundle.plugin is not None,
        )
        after = evaluate(new_bundle, env_cfg, plan.eval_episodes)
        zero = False
    else:
        merged = dataset
        new_bundle = bundle
        after = dict(before)
        zero = True
    rel = None
    if before["success_rate"] > 0:
        rel = (after["success_rate"] - before["success_rate"]) / before["success_rate"]
    elif after["success_rate"] == 0:
        rel = 0.0
    report = ImprovementRoundReport(
        round_index=round_index,
        mode=plan.mode,
        alpha=plan.alpha,
        success_before=before["success_rate"],
        success_after=after["success_rate"],
        pass_at_5=p5,
        avg_jerk=mean_jerk,
        rollouts_used=used,
        successes_collected=len(successes),
        zero_success=zero,
        relative_improvement=rel,
        snr=snr,
    )
    return new_bundle, merged, report


def run_rounds(
    bundle: PolicyBundle,
    expert_records: list[TrajectoryRecord],
    plans: list[RoundPlan],
    env_cfg: EnvConfig,
    train_cfg: TrainConfig,
) -> tuple[PolicyBundle, list[ImprovementRoundReport]]:
    """Chain improvement rounds; each starts from the previous checkpoint."""
    if not plans:
        raise ConfigError("run_rounds needs at least one plan")
    dataset = list(expert_records)
    reports = []
    for r, plan in enumerate(plans, start=1):
        bundle, dataset, report = run_round(bundle, dataset, plan, env_cfg, train_cfg, round_index=r)
        reports.append(report)
    return bundle, reports
