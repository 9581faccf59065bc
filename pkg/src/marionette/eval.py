"""Tracking metrics over simulated/reference trajectory pairs.

Positions are stored in meters; metric outputs are mm (per-frame units for
velocity and acceleration errors, i.e. mm/frame and mm/frame^2). Success is
the deviation rule: a rollout fails if the mean body deviation exceeds the
threshold at any frame.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .env import EnvConfig, TrackingEnv

M_TO_MM = 1000.0
METRIC_KEYS = ("e_g_mpjpe", "e_mpjpe", "e_acc", "e_vel")


@dataclass
class TrajectoryPair:
    sim_pos: np.ndarray    # (T, B, 3) m
    ref_pos: np.ndarray    # (T, B, 3) m
    root_index: int = 0
    fps: float = 50.0
    name: str = ""

    def __post_init__(self):
        self.sim_pos = np.asarray(self.sim_pos, dtype=np.float64)
        self.ref_pos = np.asarray(self.ref_pos, dtype=np.float64)
        if self.sim_pos.shape != self.ref_pos.shape:
            raise ValueError("trajectory shapes differ")
        if self.sim_pos.ndim != 3 or self.sim_pos.shape[2] != 3:
            raise ValueError("expected (T, B, 3) position arrays")
        if self.sim_pos.shape[0] < 2:
            raise ValueError("need at least 2 frames")
        if not 0 <= self.root_index < self.sim_pos.shape[1]:
            raise ValueError("root index out of range")


@dataclass
class EvalReport:
    name: str
    succ: bool
    e_g_mpjpe: float   # mm
    e_mpjpe: float     # mm, root-relative
    e_acc: float       # mm/frame^2
    e_vel: float       # mm/frame
    frames: int

    def as_dict(self) -> dict:
        return asdict(self)


def succ(pair: TrajectoryPair, threshold: float = 0.5) -> bool:
    """True iff the mean body deviation stays within threshold on every frame."""
    dev = np.linalg.norm(pair.sim_pos - pair.ref_pos, axis=-1).mean(axis=1)
    return bool(np.all(dev <= threshold))


def mpjpe(pair: TrajectoryPair, mode: str = "global") -> float:
    """Mean per-joint position error in mm; root_relative subtracts each
    frame's root position from both trajectories first."""
    if mode not in ("global", "root_relative"):
        raise ValueError(f"unknown mpjpe mode {mode!r}")
    sim, ref = pair.sim_pos, pair.ref_pos
    if mode == "root_relative":
        sim = sim - sim[:, pair.root_index:pair.root_index + 1]
        ref = ref - ref[:, pair.root_index:pair.root_index + 1]
    return M_TO_MM * float(np.linalg.norm(sim - ref, axis=-1).mean())


def accel_vel_error(pair: TrajectoryPair) -> tuple[float, float]:
    """(e_acc mm/frame^2, e_vel mm/frame) by forward finite differences."""
    if pair.sim_pos.shape[0] < 3:
        raise ValueError("too short: acceleration error needs >= 3 frames")
    vs = np.diff(pair.sim_pos, axis=0)
    vr = np.diff(pair.ref_pos, axis=0)
    e_vel = M_TO_MM * float(np.linalg.norm(vs - vr, axis=-1).mean())
    e_acc = M_TO_MM * float(np.linalg.norm(np.diff(vs, axis=0) - np.diff(vr, axis=0), axis=-1).mean())
    return e_acc, e_vel


def evaluate_pair(pair: TrajectoryPair, threshold: float = 0.5) -> EvalReport:
    e_acc, e_vel = accel_vel_error(pair)
    return EvalReport(
        name=pair.name,
        succ=succ(pair, threshold),
        e_g_mpjpe=mpjpe(pair, "global"),
        e_mpjpe=mpjpe(pair, "root_relative"),
        e_acc=e_acc,
        e_vel=e_vel,
        frames=pair.sim_pos.shape[0],
    )


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Means over all clips and over the successful subset (Table-1 split)."""
    def subset_means(rows):
        out = {"n": len(rows)}
        for key in METRIC_KEYS:
            out[key] = float(np.mean([getattr(r, key) for r in rows])) if rows else math.nan
        return out

    ok = [r for r in reports if r.succ]
    return {
        "success_rate": len(ok) / len(reports) if reports else math.nan,
        "all": subset_means(reports),
        "successful": subset_means(ok),
    }


def write_report(reports: list[EvalReport], csv_path=None, json_path=None) -> dict:
    agg = aggregate_reports(reports)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["name", "succ", *METRIC_KEYS, "frames"])
            writer.writeheader()
            for r in reports:
                writer.writerow(r.as_dict())
    if json_path:
        with open(json_path, "w") as fh:
            json.dump({"clips": [r.as_dict() for r in reports], "aggregate": agg}, fh, indent=2)
    return agg


def format_summary(reports: list[EvalReport]) -> str:
    """Fixed-width summary table over the all/successful splits."""
    agg = aggregate_reports(reports)
    lines = [f"clips: {len(reports)}   Succ: {100.0 * agg['success_rate']:.2f}%"]
    header = f"{'subset':<12}{'n':>4}{'E_g-mpjpe':>12}{'E_mpjpe':>10}{'E_acc':>10}{'E_vel':>10}"
    lines.append(header)
    for subset in ("all", "successful"):
        s = agg[subset]
        lines.append(
            f"{subset:<12}{s['n']:>4}{s['e_g_mpjpe']:>12.2f}{s['e_mpjpe']:>10.2f}"
            f"{s['e_acc']:>10.3f}{s['e_vel']:>10.3f}")
    return "\n".join(lines)


# ---- rollout wiring ----


def _as_policy_fn(policy):
    if callable(policy) and not hasattr(policy, "mean"):
        return policy
    return policy.mean


def rollout_pair(
    env: TrackingEnv,
    policy,
    clip,
    start: int = 0,
    max_steps: int | None = None,
) -> TrajectoryPair:
    """Roll the policy's mean action on one clip, pairing each reached state
    with the reference frame it was steered toward. Frame 0 is the reset
    state (on-reference by construction)."""
    fn = _as_policy_fn(policy)
    obs = env.reset(clip=clip, start=start)
    sim = [env.state.body_pose.pos.copy()]
    ref = [clip.frame(start).body_pos.copy()]
    done = False
    steps = 0
    while not done and (max_steps is None or steps < max_steps):
        goal = env.goal_frame()
        obs, _, done, info = env.step(fn(obs))
        sim.append(env.state.body_pose.pos.copy())
        ref.append(goal.body_pos.copy())
        steps += 1
    fps = clip.fps
    return TrajectoryPair(np.stack(sim), np.stack(ref), root_index=0, fps=fps, name=clip.name)


def evaluate_policy(
    model,
    clips,
    policy,
    env_cfg: EnvConfig | None = None,
    seed: int = 0,
    threshold: float = 0.5,
    max_steps: int | None = None,
) -> tuple[list[EvalReport], dict]:
    """One rollout per clip from frame 0; returns per-clip reports + aggregate."""
    env = TrackingEnv(model, list(clips), env_cfg, seed=seed)
    reports = [
        evaluate_pair(rollout_pair(env, policy, clip, max_steps=max_steps), threshold)
        for clip in clips
    ]
    return reports, aggregate_reports(reports)
