"""Observation assembly: history buffer, goal encodings, and policy inputs.

All task-relative quantities are expressed in the root-heading frame (yaw-only
alignment at the current root position), which makes every encoding invariant
to global yaw and translation applied to robot and reference together.

Rotations use the 6-D two-column encoding; "diff" slices are elementwise
differences of identically-encoded slices, so a robot exactly on the reference
produces all-zero diffs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import geom
from .model import HumanoidModel

VARIANTS = ("privileged", "h2o", "points3", "points8", "points22", "w-linvel")


@dataclass
class ObsSchema:
    """Ordered named slices over a flat observation vector."""

    variant: str
    entries: list[tuple[str, int]]

    @property
    def total(self) -> int:
        return sum(w for _, w in self.entries)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def slice_of(self, name: str) -> slice:
        off = 0
        for n, w in self.entries:
            if n == name:
                return slice(off, off + w)
            off += w
        raise KeyError(name)

    def split(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        return {n: vec[self.slice_of(n)] for n, _ in self.entries}

    def to_json(self) -> str:
        return json.dumps({"variant": self.variant, "entries": self.entries})

    @classmethod
    def from_json(cls, text: str) -> "ObsSchema":
        data = json.loads(text)
        return cls(variant=data["variant"], entries=[(n, int(w)) for n, w in data["entries"]])


@dataclass
class ObsVector:
    data: np.ndarray
    schema: ObsSchema

    def __post_init__(self):
        if self.data.shape != (self.schema.total,):
            raise ValueError(f"vector length {self.data.shape} != schema total {self.schema.total}")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[self.schema.slice_of(name)]


class HistoryBuffer:
    """Fixed-capacity chronological record store, zero-filled until warm.

    Records are stored oldest-to-newest; width is 63-style (d, dvel, omega,
    gravity, action) or 66 with the root linear velocity inserted after
    gravity.
    """

    def __init__(self, capacity: int = 25, width: int = 63):
        if capacity < 0 or width <= 0:
            raise ValueError("capacity must be >= 0, width > 0")
        self.capacity = capacity
        self.width = width
        self.data = np.zeros((capacity, width))

    def reset(self) -> None:
        self.data[:] = 0.0

    def push(self, record: np.ndarray) -> None:
        record = np.asarray(record, dtype=np.float64)
        if record.shape != (self.width,):
            raise ValueError(f"record width {record.shape} != {self.width}")
        if self.capacity == 0:
            return
        self.data[:-1] = self.data[1:]
        self.data[-1] = record

    def record(self, k: int) -> np.ndarray:
        return self.data[k]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1).copy()


# ---- frame helpers ----


def _heading_inv(state):
    h = geom.heading_quat(state.root_quat)
    return geom.quat_conj(h)


def _local_point(hinv, origin, p):
    return geom.quat_rotate(hinv, p - origin)


def _local_vec(hinv, v):
    return geom.quat_rotate(hinv, v)


def _local_rot(hinv, q):
    return geom.quat_to_sixd(geom.quat_mul(hinv, q))


def _extended(arr: np.ndarray) -> np.ndarray:
    """Body array prefixed with a dedicated root entry (row 0 duplicated)."""
    return np.concatenate([arr[:1], arr], axis=0)


def goal_keypoint_indices(model: HumanoidModel, variant: str) -> np.ndarray:
    if variant == "points3":
        return model.points3_indices()
    if variant in ("points8", "h2o"):
        return model.points8_indices()
    if variant == "points22":
        return np.arange(model.body_count)
    raise ValueError(f"no keypoint set for variant {variant!r}")


def goal_width(model: HumanoidModel, variant: str) -> int:
    if variant == "privileged":
        b = model.body_count
        # goal_pos(3b) + two 6d-rotation rows + six 3-vector rows over b+1
        return 3 * b + 2 * 6 * (b + 1) + 6 * 3 * (b + 1)
    return 9 * len(goal_keypoint_indices(model, variant))


def encode_goal(model: HumanoidModel, variant: str, state, frame) -> np.ndarray:
    """Goal encoding in the root-heading frame.

    Point variants produce per-keypoint triplets (ref - cur position,
    ref - cur velocity, ref position local to the current root). The
    privileged variant produces the full body-state comparison block.
    """
    hinv = _heading_inv(state)
    origin = state.root_pos
    pose = state.body_pose
    if variant == "privileged":
        ext = lambda a: _extended(np.asarray(a))
        goal_pos = _local_point(hinv, origin, frame.body_pos)
        goal_rot = _local_rot(hinv, ext(frame.body_quat))
        goal_vel = _local_vec(hinv, ext(frame.body_lin_vel))
        goal_ang = _local_vec(hinv, ext(frame.body_ang_vel))
        cur_pos = _local_point(hinv, origin, ext(pose.pos))
        cur_rot = _local_rot(hinv, ext(pose.quat))
        ref_pos = _local_point(hinv, origin, ext(frame.body_pos))
        pos_diff = ref_pos - cur_pos
        rot_diff = goal_rot - cur_rot
        vel_diff = _local_vec(hinv, ext(frame.body_lin_vel) - ext(pose.lin_vel))
        ang_diff = _local_vec(hinv, ext(frame.body_ang_vel) - ext(pose.ang_vel))
        return np.concatenate([
            goal_pos.reshape(-1), goal_rot.reshape(-1), goal_vel.reshape(-1), goal_ang.reshape(-1),
            pos_diff.reshape(-1), rot_diff.reshape(-1), vel_diff.reshape(-1), ang_diff.reshape(-1),
            cur_pos.reshape(-1),
        ])
    idx = goal_keypoint_indices(model, variant)
    p_ref = frame.body_pos[idx]
    v_ref = frame.body_lin_vel[idx]
    p_cur = pose.pos[idx]
    v_cur = pose.lin_vel[idx]
    triplet = np.concatenate([
        _local_vec(hinv, p_ref - p_cur),
        _local_vec(hinv, v_ref - v_cur),
        _local_point(hinv, origin, p_ref),
    ], axis=-1)
    return triplet.reshape(-1)


# ---- proprioceptive records ----


def step_record(state, last_action: np.ndarray, with_linvel: bool = False) -> np.ndarray:
    """One history record: d, dvel, root-frame angular velocity, projected
    gravity, optional root-frame linear velocity, previous action."""
    omega = geom.quat_rotate_inv(state.root_quat, state.root_ang_vel)
    parts = [state.dof_pos, state.dof_vel, omega, state.projected_gravity]
    if with_linvel:
        parts.append(geom.quat_rotate_inv(state.root_quat, state.root_vel))
    parts.append(np.asarray(last_action, dtype=np.float64))
    return np.concatenate(parts)


def record_width(model: HumanoidModel, with_linvel: bool = False) -> int:
    return 3 * model.dof_count + 6 + (3 if with_linvel else 0)


# ---- schemas ----


def obs_schema(model: HumanoidModel, variant: str, history_steps: int = 25) -> ObsSchema:
    J = model.dof_count
    B = model.body_count
    if variant == "privileged":
        entries = [
            ("goal_pos", 3 * B),
            ("goal_rot", 6 * (B + 1)),
            ("goal_vel", 3 * (B + 1)),
            ("goal_ang_vel", 3 * (B + 1)),
            ("pos_diff", 3 * (B + 1)),
            ("rot_diff", 6 * (B + 1)),
            ("vel_diff", 3 * (B + 1)),
            ("ang_vel_diff", 3 * (B + 1)),
            ("local_pos", 3 * (B + 1)),
            ("local_rot", 6 * (B + 1)),
            ("action", J),
        ]
        return ObsSchema("privileged", entries)
    if variant == "h2o":
        entries = [
            ("dof_pos", J), ("dof_vel", J), ("root_ang_vel", 3), ("gravity", 3),
            ("root_lin_vel", 3), ("goal", goal_width(model, "h2o")), ("action", J),
        ]
        return ObsSchema("h2o", entries)
    if variant in ("points3", "points8", "points22", "w-linvel"):
        with_linvel = variant == "w-linvel"
        goal_variant = "points3" if with_linvel else variant
        entries = [("dof_pos", J), ("dof_vel", J), ("root_ang_vel", 3), ("gravity", 3)]
        if with_linvel:
            entries.append(("root_lin_vel", 3))
        entries += [
            ("goal", goal_width(model, goal_variant)),
            ("action", J),
            ("history", history_steps * record_width(model, with_linvel)),
        ]
        return ObsSchema(variant, entries)
    raise ValueError(f"unknown variant {variant!r}")


# ---- builders ----


def build_privileged_obs(model: HumanoidModel, state, frame, last_action: np.ndarray) -> ObsVector:
    schema = obs_schema(model, "privileged")
    hinv = _heading_inv(state)
    local_rot = _local_rot(hinv, _extended(state.body_pose.quat))
    vec = np.concatenate([
        encode_goal(model, "privileged", state, frame),
        local_rot.reshape(-1),
        np.asarray(last_action, dtype=np.float64),
    ])
    return ObsVector(vec, schema)


def build_student_obs(
    model: HumanoidModel,
    state,
    frame,
    last_action: np.ndarray,
    history: HistoryBuffer,
    variant: str = "points3",
) -> ObsVector:
    """Current proprio + goal block followed by the history, oldest first."""
    if variant not in ("points3", "points8", "points22", "w-linvel"):
        raise ValueError(f"not a student variant: {variant!r}")
    with_linvel = variant == "w-linvel"
    goal_variant = "points3" if with_linvel else variant
    if history.width != record_width(model, with_linvel):
        raise ValueError(f"history width {history.width} does not match variant {variant!r}")
    omega = geom.quat_rotate_inv(state.root_quat, state.root_ang_vel)
    parts = [state.dof_pos, state.dof_vel, omega, state.projected_gravity]
    if with_linvel:
        parts.append(geom.quat_rotate_inv(state.root_quat, state.root_vel))
    parts += [
        encode_goal(model, goal_variant, state, frame),
        np.asarray(last_action, dtype=np.float64),
        history.flat(),
    ]
    schema = obs_schema(model, variant, history_steps=history.capacity)
    return ObsVector(np.concatenate(parts), schema)


def build_variant_obs(
    model: HumanoidModel,
    variant: str,
    state,
    frame,
    last_action: np.ndarray,
    history: HistoryBuffer | None = None,
) -> ObsVector:
    if variant == "privileged":
        return build_privileged_obs(model, state, frame, last_action)
    if variant == "h2o":
        omega = geom.quat_rotate_inv(state.root_quat, state.root_ang_vel)
        vlin = geom.quat_rotate_inv(state.root_quat, state.root_vel)
        vec = np.concatenate([
            state.dof_pos, state.dof_vel, omega, state.projected_gravity, vlin,
            encode_goal(model, "h2o", state, frame),
            np.asarray(last_action, dtype=np.float64),
        ])
        return ObsVector(vec, obs_schema(model, "h2o"))
    if variant in ("points3", "points8", "points22", "w-linvel"):
        if history is None:
            raise ValueError(f"variant {variant!r} needs a history buffer")
        return build_student_obs(model, state, frame, last_action, history, variant)
    raise ValueError(f"unknown variant {variant!r}")
