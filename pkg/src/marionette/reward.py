"""Reward terms for motion tracking plus the penalty-scaling curriculum.

Every term is returned individually (already weighted and curriculum-scaled)
so logs and tests can inspect them; the total is their exact sum. Negative
term values are multiplied by the curriculum scale, non-negative values pass
through unscaled.

Expression notes kept faithful to their source conventions:
- limit indicators count joints strictly outside the closed interval, so the
  term is an integer multiple of the weight before scaling;
- the torque-limit indicator uses the pre-clamp torque (the applied torque
  never leaves the limits by construction);
- air-time and per-step swing-height terms are credited once per touchdown
  from the latched swing bookkeeping, not accrued every tick;
- "orientation" penalties measure the horizontal component of gravity in the
  root/foot frame (zero when upright / foot flat);
- body rotation distance is the geodesic angle summed over bodies.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import geom
from .model import HumanoidModel

TASK_TERMS = (
    "track_dof_pos",
    "track_dof_vel",
    "track_body_pos",
    "track_vr_points",
    "track_body_rot",
    "track_body_vel",
    "track_body_ang_vel",
)

PENALTY_TERMS = (
    "torque_limits",
    "dof_pos_limits",
    "dof_vel_limits",
    "termination",
    "dof_acc",
    "dof_vel",
    "action_rate_lower",
    "action_rate_upper",
    "torque",
    "feet_air_time",
    "max_feet_height",
    "feet_contact_force",
    "stumble",
    "slippage",
    "feet_orientation",
    "in_the_air",
    "orientation",
)

ALL_TERMS = PENALTY_TERMS + TASK_TERMS


@dataclass
class RewardWeights:
    torque_limits: float = -2.0
    dof_pos_limits: float = -125.0
    dof_vel_limits: float = -50.0
    termination: float = -250.0
    dof_acc: float = -0.000011
    dof_vel: float = -0.004
    action_rate_lower: float = -3.0
    action_rate_upper: float = -0.625
    torque: float = -0.0001
    feet_air_time: float = 1000.0
    max_feet_height: float = 1000.0
    feet_contact_force: float = -0.75
    stumble: float = -0.00125
    slippage: float = -37.5
    feet_orientation: float = -62.5
    in_the_air: float = -200.0
    orientation: float = -200.0
    track_dof_pos: float = 32.0
    track_dof_vel: float = 16.0
    track_body_pos: float = 30.0
    track_vr_points: float = 50.0
    track_body_rot: float = 20.0
    track_body_vel: float = 8.0
    track_body_ang_vel: float = 8.0
    # the printed swing-height bonus rewards high steps; this flag flips it
    # into a penalty without touching the magnitude
    max_height_penalty: bool = False

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "max_height_penalty"}

    @classmethod
    def from_dict(cls, data: dict) -> "RewardWeights":
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise KeyError(f"unknown reward weights: {sorted(bad)}")
        return cls(**data)


@dataclass
class CurriculumState:
    s_current: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.s_current <= 1.0):
            raise ValueError("s_current must be in (0, 1]")


def curriculum_update(c: CurriculumState, avg_episode_length: float) -> CurriculumState:
    """Shrink penalties while episodes are short, grow them back when long."""
    s = c.s_current
    if avg_episode_length < 40:
        s = s * 0.9999
    elif avg_episode_length > 120:
        s = min(1.0, s * 1.0001)
    return CurriculumState(s_current=s)


def _contact_norm(foot_force: np.ndarray) -> np.ndarray:
    return np.linalg.norm(foot_force, axis=-1)


def compute_reward(
    model: HumanoidModel,
    state,
    action: np.ndarray,
    prev_action: np.ndarray,
    frame,
    weights: RewardWeights | None = None,
    curriculum: CurriculumState | None = None,
    terminated: bool = False,
) -> tuple[float, dict[str, float]]:
    w = weights or RewardWeights()
    s_cur = (curriculum or CurriculumState(1.0)).s_current
    action = np.asarray(action, dtype=np.float64)
    prev_action = np.asarray(prev_action, dtype=np.float64)
    pose = state.body_pose
    raw: dict[str, float] = {}

    # limit indicators: count per joint, strictly outside the closed interval
    raw["torque_limits"] = w.torque_limits * float(
        np.count_nonzero(np.abs(state.torque_raw) > model.torque_limit)
    )
    raw["dof_pos_limits"] = w.dof_pos_limits * float(
        np.count_nonzero((state.dof_pos < model.joint_limit_lo) | (state.dof_pos > model.joint_limit_hi))
    )
    raw["dof_vel_limits"] = w.dof_vel_limits * float(
        np.count_nonzero(np.abs(state.dof_vel) > model.vel_limit)
    )
    raw["termination"] = w.termination * float(bool(terminated))

    raw["dof_acc"] = w.dof_acc * float(np.sum(state.dof_acc ** 2))
    raw["dof_vel"] = w.dof_vel * float(np.sum(state.dof_vel ** 2))
    d_act = action - prev_action
    raw["action_rate_lower"] = w.action_rate_lower * float(np.sum(d_act[model.lower_dofs] ** 2))
    raw["action_rate_upper"] = w.action_rate_upper * float(np.sum(d_act[model.upper_dofs] ** 2))
    raw["torque"] = w.torque * float(np.linalg.norm(state.torque))

    n_feet = len(model.feet)
    if n_feet:
        force = np.asarray(state.foot_force, dtype=np.float64)
        fmag = _contact_norm(force)
        touchdown = np.asarray(state.foot_touchdown, dtype=bool)
        air_credit = float(np.sum((state.foot_last_air_time - 0.25) * touchdown))
        raw["feet_air_time"] = w.feet_air_time * air_credit
        h_credit = float(np.sum(np.maximum(state.foot_last_swing_height - 0.25, 0.0) * touchdown))
        height_w = -abs(w.max_feet_height) if w.max_height_penalty else w.max_feet_height
        raw["max_feet_height"] = height_w * h_credit
        raw["feet_contact_force"] = w.feet_contact_force * float(np.sum(force ** 2))
        f_xy = np.linalg.norm(force[:, :2], axis=-1)
        raw["stumble"] = w.stumble * float(np.count_nonzero(f_xy > 5.0 * np.abs(force[:, 2])))
        slipping = fmag >= 1.0
        foot_vel = np.stack([pose.lin_vel[f.body] for f in model.feet])
        raw["slippage"] = w.slippage * float(np.sum(np.sum(foot_vel ** 2, axis=-1) * slipping))
        tilt = 0.0
        for f in model.feet:
            g_foot = geom.quat_rotate_inv(pose.quat[f.body], np.array([0.0, 0.0, -1.0]))
            tilt += float(np.linalg.norm(g_foot[:2]))
        raw["feet_orientation"] = w.feet_orientation * tilt
        raw["in_the_air"] = w.in_the_air * float(np.all(fmag < 1.0))
    else:
        for name in ("feet_air_time", "max_feet_height", "feet_contact_force",
                     "stumble", "slippage", "feet_orientation", "in_the_air"):
            raw[name] = 0.0

    raw["orientation"] = w.orientation * float(np.linalg.norm(state.projected_gravity[:2]))

    # task tracking: world-frame errors against the reference frame
    raw["track_dof_pos"] = w.track_dof_pos * float(
        np.exp(-0.25 * np.linalg.norm(frame.dof_pos - state.dof_pos))
    )
    raw["track_dof_vel"] = w.track_dof_vel * float(
        np.exp(-0.25 * np.sum((frame.dof_vel - state.dof_vel) ** 2))
    )
    raw["track_body_pos"] = w.track_body_pos * float(
        np.exp(-0.5 * np.sum((pose.pos - frame.body_pos) ** 2))
    )
    vr = model.points3_indices()
    raw["track_vr_points"] = w.track_vr_points * float(
        np.exp(-0.5 * np.sum((pose.pos[vr] - frame.body_pos[vr]) ** 2))
    )
    angles = geom.quat_geodesic_angle(pose.quat, frame.body_quat)
    raw["track_body_rot"] = w.track_body_rot * float(np.exp(-0.1 * np.sum(angles)))
    raw["track_body_vel"] = w.track_body_vel * float(
        np.exp(-10.0 * np.linalg.norm(pose.lin_vel - frame.body_lin_vel))
    )
    raw["track_body_ang_vel"] = w.track_body_ang_vel * float(
        np.exp(-0.01 * np.linalg.norm(pose.ang_vel - frame.body_ang_vel))
    )

    terms = {k: (v * s_cur if v < 0.0 else v) for k, v in raw.items()}
    total = float(sum(terms.values()))
    return total, terms


def task_subtotal(terms: dict[str, float]) -> float:
    return float(sum(terms[k] for k in TASK_TERMS))
