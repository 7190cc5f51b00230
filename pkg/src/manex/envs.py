"""Deterministic planar manipulation environments with multimodal solutions.

Two tasks on the unit square: planar-reach (point robot must round a circular
obstacle, two homotopy modes) and planar-push (robot pushes a disc object to
a goal by contact). Everything is kinematic and fully determined by
(config, seed, action sequence). Scripted experts with a configurable detour
bias generate demonstrations.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .rng import RngStream

DATASET_FORMAT_VERSION = 1


@dataclass
class Box:
    """Axis-aligned sampling box [lo, hi] per coordinate."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def sample(self, rng: RngStream) -> np.ndarray:
        return np.array(
            [rng.uniform(self.lo[0], self.hi[0]), rng.uniform(self.lo[1], self.hi[1])]
        )


@dataclass
class EnvConfig:
    name: str = "planar-reach"
    horizon: int = 60
    tol: float = 0.05
    max_step: float = 0.05
    control_hz: float = 10.0
    expert_bias: float = 0.5  # probability the expert detours left
    start_box: Box = field(default_factory=lambda: Box((0.15, 0.05), (0.85, 0.2)))
    goal_box: Box = field(default_factory=lambda: Box((0.15, 0.8), (0.85, 0.95)))
    object_box: Box = field(default_factory=lambda: Box((0.3, 0.35), (0.7, 0.5)))
    obstacle_center_box: Box = field(default_factory=lambda: Box((0.35, 0.45), (0.65, 0.55)))
    obstacle_radius_range: tuple[float, float] = (0.12, 0.18)
    object_radius: float = 0.06

    def validate(self) -> None:
        if self.name not in ("planar-reach", "planar-push"):
            raise ConfigError(f"unknown env name {self.name!r}")
        if self.tol <= 0:
            raise ConfigError("env.tol must be > 0")
        if self.horizon < 1:
            raise ConfigError("env.horizon must be >= 1")
        if self.max_step <= 0:
            raise ConfigError("env.max_step must be > 0")
        if not 0.0 <= self.expert_bias <= 1.0:
            raise ConfigError("env.expert_bias must be in [0, 1]")

    @property
    def obs_dim(self) -> int:
        return 9 if self.name == "planar-push" else 7

    @property
    def act_dim(self) -> int:
        return 2


def make_env_config(name: str, **overrides) -> EnvConfig:
    """Default configuration per task; keyword overrides applied on top."""
    if name == "planar-reach":
        cfg = EnvConfig(name=name)
    elif name == "planar-push":
        cfg = EnvConfig(
            name=name,
            tol=0.06,
            horizon=70,
            goal_box=Box((0.3, 0.75), (0.7, 0.9)),
            start_box=Box((0.2, 0.05), (0.8, 0.15)),
            obstacle_center_box=Box((0.5, 0.5), (0.5, 0.5)),
            obstacle_radius_range=(0.0, 0.0),
        )
    else:
        raise ConfigError(f"unknown env name {name!r}")
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


@dataclass
class EnvState:
    robot: np.ndarray
    goal: np.ndarray
    obstacle_center: np.ndarray
    obstacle_radius: float
    obj: np.ndarray | None = None  # push task only
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(
            robot=self.robot.copy(),
            goal=self.goal.copy(),
            obstacle_center=self.obstacle_center.copy(),
            obstacle_radius=self.obstacle_radius,
            obj=None if self.obj is None else self.obj.copy(),
            t=self.t,
        )


class PlanarEnv:
    """One environment instance; not shareable between threads mid-episode."""

    def __init__(self, cfg: EnvConfig):
        cfg.validate()
        self.cfg = cfg
        self.state: EnvState | None = None

    def reset(self, seed: int) -> np.ndarray:
        rng = RngStream(seed, f"env/{self.cfg.name}")
        robot = self.cfg.start_box.sample(rng)
        goal = self.cfg.goal_box.sample(rng)
        oc = self.cfg.obstacle_center_box.sample(rng)
        r = float(rng.uniform(*self.cfg.obstacle_radius_range))
        obj = self.cfg.object_box.sample(rng) if self.cfg.name == "planar-push" else None
        self.state = EnvState(robot=robot, goal=goal, obstacle_center=oc, obstacle_radius=r, obj=obj)
        return self.observe()

    def observe(self) -> np.ndarray:
        s = self._require_state()
        parts = [s.robot]
        if self.cfg.name == "planar-push":
            parts.append(s.obj)
        parts.extend([s.goal, s.obstacle_center, [s.obstacle_radius]])
        return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise ConfigError("env used before reset")
        return self.state

    def _target(self, s: EnvState) -> np.ndarray:
        return s.obj if self.cfg.name == "planar-push" else s.robot

    def success(self) -> bool:
        s = self._require_state()
        return bool(np.linalg.norm(self._target(s) - s.goal) <= self.cfg.tol)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, bool, bool]:
        """Apply one clipped action. Returns (observation, done, success)."""
        s = self._require_state()
        a = np.clip(np.asarray(action, dtype=np.float64), -self.cfg.max_step, self.cfg.max_step)
        new = np.clip(s.robot + a, 0.0, 1.0)
        if s.obstacle_radius > 0.0:
            v = new - s.obstacle_center
            dist = float(np.linalg.norm(v))
            if dist < s.obstacle_radius:
                # block the radial (penetrating) component, keep the tangential one
                if dist > 1e-12:
                    new = s.obstacle_center + v / dist * s.obstacle_radius
                else:
                    new = s.robot.copy()
            new = np.clip(new, 0.0, 1.0)
        s.robot = new
        if s.obj is not None:
            v = s.obj - s.robot
            dist = float(np.linalg.norm(v))
            if dist < self.cfg.object_radius:
                if dist > 1e-12:
                    n = v / dist
                else:
                    amag = float(np.linalg.norm(a))
                    n = a / amag if amag > 1e-12 else np.array([1.0, 0.0])
                s.obj = np.clip(s.robot + n * self.cfg.object_radius, 0.0, 1.0)
        s.t += 1
        success = self.success()
        done = success or s.t >= self.cfg.horizon
        return self.observe(), done, success

    def clone(self) -> "PlanarEnv":
        env = PlanarEnv(self.cfg)
        env.state = self._require_state().copy()
        return env

    def simulate_chunk(self, chunk: np.ndarray) -> np.ndarray:
        """Kinematic preview on a clone: (H+1, 2) robot positions, state untouched."""
        env = self.clone()
        pts = [env.state.robot.copy()]
        for a in np.asarray(chunk, dtype=np.float64):
            env.step(a)
            pts.append(env.state.robot.copy())
        return np.stack(pts)


# ---- scripted expert -------------------------------------------------------


def _segment_blocked(p: np.ndarray, q: np.ndarray, center: np.ndarray, radius: float) -> bool:
    """True when segment p->q passes within `radius` of `center`."""
    d = q - p
    L2 = float(d @ d)
    if L2 < 1e-18:
        return float(np.linalg.norm(p - center)) < radius
    u = float(np.clip((center - p) @ d / L2, 0.0, 1.0))
    closest = p + u * d
    return float(np.linalg.norm(closest - center)) < radius


def _toward(robot: np.ndarray, target: np.ndarray, max_step: float) -> np.ndarray:
    v = target - robot
    n = float(np.linalg.norm(v))
    if n > max_step:
        v = v / n * max_step
    return np.clip(v, -max_step, max_step)


def expert_action(state: EnvState, cfg: EnvConfig, side: str) -> np.ndarray:
    """One greedy expert step; `side` fixes the detour direction for the episode."""
    s = state
    if cfg.name == "planar-push":
        obj, goal = s.obj, s.goal
        r_o = cfg.object_radius
        if float(np.linalg.norm(obj - goal)) <= cfg.tol:
            return np.zeros(2)
        pd = (goal - obj) / float(np.linalg.norm(goal - obj))
        rel = s.robot - obj
        along = float(rel @ pd)
        lat = rel - along * pd
        if along < -0.25 * r_o and float(np.linalg.norm(lat)) < 0.6 * r_o:
            # aligned behind the object: drive into its back face
            return _toward(s.robot, obj - pd * (0.5 * r_o), cfg.max_step)
        behind_pt = obj - pd * (r_o + 0.03)
        target = behind_pt
        if _segment_blocked(s.robot, behind_pt, obj, r_o + 0.02):
            # slide around the object: waypoint perpendicular to the current
            # travel direction, on the side the robot already occupies
            v = behind_pt - s.robot
            v = v / float(np.linalg.norm(v))
            left = np.array([-v[1], v[0]])
            perp = left if float(rel @ left) >= 0.0 else -left
            target = obj + perp * (r_o + 0.07)
        return _toward(s.robot, target, cfg.max_step)

    # planar-reach
    target = s.goal
    if s.obstacle_radius > 0.0 and _segment_blocked(
        s.robot, s.goal, s.obstacle_center, s.obstacle_radius + 0.02
    ):
        v = s.goal - s.robot
        v = v / float(np.linalg.norm(v))
        left = np.array([-v[1], v[0]])
        perp = left if side == "left" else -left
        target = s.obstacle_center + perp * (s.obstacle_radius + 0.08)
    return _toward(s.robot, target, cfg.max_step)


def scripted_expert(state: EnvState, cfg: EnvConfig, side: str, h: int) -> np.ndarray:
    """H-step expert chunk previewed kinematically from `state`."""
    env = PlanarEnv(cfg)
    env.state = state.copy()
    actions = []
    for _ in range(h):
        a = expert_action(env.state, cfg, side)
        env.step(a)
        actions.append(a)
    return np.stack(actions)


def expert_side(seed: int, bias: float) -> str:
    """Per-episode detour side: left with probability `bias`."""
    return "left" if float(RngStream(seed, "expert/side").uniform()) < bias else "right"


# ---- trajectories and datasets ---------------------------------------------


@dataclass
class TrajectoryRecord:
    observations: np.ndarray  # (T, obs_dim), observation before each action
    actions: np.ndarray  # (T, act_dim), post-clipping values
    success: bool
    source: str  # expert | rollout | steered
    env: str
    seed: int
    round: int = 0

    def to_dict(self) -> dict:
        return {
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "success": bool(self.success),
            "source": self.source,
            "env": self.env,
            "seed": int(self.seed),
            "round": int(self.round),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        return cls(
            observations=np.asarray(d["observations"], dtype=np.float64),
            actions=np.asarray(d["actions"], dtype=np.float64),
            success=bool(d["success"]),
            source=d["source"],
            env=d["env"],
            seed=int(d["seed"]),
            round=int(d.get("round", 0)),
        )


def run_expert_episode(cfg: EnvConfig, seed: int) -> TrajectoryRecord:
    env = PlanarEnv(cfg)
    obs = env.reset(seed)
    side = expert_side(seed, cfg.expert_bias)
    observations, actions = [], []
    done = False
    success = False
    while not done:
        a = expert_action(env.state, cfg, side)
        a = np.clip(a, -cfg.max_step, cfg.max_step)
        observations.append(obs)
        actions.append(a)
        obs, done, success = env.step(a)
    return TrajectoryRecord(
        observations=np.stack(observations),
        actions=np.stack(actions),
        success=success,
        source="expert",
        env=cfg.name,
        seed=seed,
        round=0,
    )


def generate_demos(cfg: EnvConfig, n: int, seed: int) -> list[TrajectoryRecord]:
    """n successful expert episodes; failed attempts are resampled."""
    if n < 1:
        raise ConfigError("generate_demos needs n >= 1")
    records = []
    attempt = 0
    while len(records) < n:
        if attempt >= 10 * n:
            raise ConfigError(
                f"expert failed to produce {n} successes within {10 * n} attempts"
            )
        rec = run_expert_episode(cfg, seed + attempt)
        attempt += 1
        if rec.success:
            records.append(rec)
    return records


def dataset_meta_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return f"{base}.meta.json"


def save_dataset(path: str, records: list[TrajectoryRecord], meta: dict) -> None:
    """JSON Lines, one record per line, plus a sidecar metadata document."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":")))
            f.write("\n")
    doc = {"format_version": DATASET_FORMAT_VERSION, "records": len(records), **meta}
    with open(dataset_meta_path(path), "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def load_dataset(path: str) -> tuple[list[TrajectoryRecord], dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(TrajectoryRecord.from_dict(json.loads(line)))
    meta = {}
    mpath = dataset_meta_path(path)
    if os.path.exists(mpath):
        with open(mpath) as f:
            meta = json.load(f)
    return records, meta
