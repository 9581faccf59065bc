"""Humanoid structure: bodies, joints, limits, gains, keypoint sets.

The reference config is a 22-body / 19-DoF biped (~1.8 m, ~47 kg): floating
pelvis, 5 links per leg (hip yaw/roll/pitch, knee, ankle), yaw torso, 4 links
per arm (shoulder pitch/roll/yaw, elbow) and fixed hand bodies. The head is
not a separate body; the "head" keypoint rides on the torso link.

Every observation dimension and reward term in the package is derived from
this structure, so the model is immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import geom

MODEL_VERSION = 1


@dataclass
class Joint:
    name: str
    child_body: int
    axis: np.ndarray          # unit 3-vector, fixed in parent (and child) frame
    limit: tuple[float, float]  # rad, closed interval
    vel_limit: float          # rad/s
    torque_limit: float       # N*m
    kp: float                 # N*m/rad
    kd: float                 # N*m*s/rad


@dataclass
class Body:
    name: str
    parent: int               # -1 for root
    offset: np.ndarray        # origin in parent frame, m
    joint: int                # joint index driving this body, -1 if rigidly attached
    mass: float               # kg
    com: np.ndarray           # center of mass in body frame, m
    inertia: np.ndarray       # diagonal inertia about com, kg*m^2


@dataclass
class FootSpec:
    body: int
    points: np.ndarray        # contact point offsets in body frame, (K, 3)


@dataclass
class HumanoidModel:
    name: str
    bodies: list[Body]
    joints: list[Joint]
    keypoints: dict[str, int]           # keypoint name -> body index
    points3: list[str]
    points8: list[str]
    upper_dofs: np.ndarray
    lower_dofs: np.ndarray
    feet: list[FootSpec]                # [left, right] when present
    default_pose: np.ndarray            # standing DoF targets, rad
    default_root_height: float          # root z placing soles at ground, m
    # dense per-joint arrays, derived in __post_init__
    joint_axis: np.ndarray = field(init=False)
    joint_limit_lo: np.ndarray = field(init=False)
    joint_limit_hi: np.ndarray = field(init=False)
    vel_limit: np.ndarray = field(init=False)
    torque_limit: np.ndarray = field(init=False)
    kp: np.ndarray = field(init=False)
    kd: np.ndarray = field(init=False)
    body_parent: np.ndarray = field(init=False)
    body_offset: np.ndarray = field(init=False)
    body_joint: np.ndarray = field(init=False)
    body_mass: np.ndarray = field(init=False)
    body_com: np.ndarray = field(init=False)
    body_inertia: np.ndarray = field(init=False)

    def __post_init__(self):
        self.joint_axis = np.array([j.axis for j in self.joints], dtype=np.float64).reshape(-1, 3)
        self.joint_limit_lo = np.array([j.limit[0] for j in self.joints], dtype=np.float64)
        self.joint_limit_hi = np.array([j.limit[1] for j in self.joints], dtype=np.float64)
        self.vel_limit = np.array([j.vel_limit for j in self.joints], dtype=np.float64)
        self.torque_limit = np.array([j.torque_limit for j in self.joints], dtype=np.float64)
        self.kp = np.array([j.kp for j in self.joints], dtype=np.float64)
        self.kd = np.array([j.kd for j in self.joints], dtype=np.float64)
        self.body_parent = np.array([b.parent for b in self.bodies], dtype=np.int64)
        self.body_offset = np.array([b.offset for b in self.bodies], dtype=np.float64).reshape(-1, 3)
        self.body_joint = np.array([b.joint for b in self.bodies], dtype=np.int64)
        self.body_mass = np.array([b.mass for b in self.bodies], dtype=np.float64)
        self.body_com = np.array([b.com for b in self.bodies], dtype=np.float64).reshape(-1, 3)
        self.body_inertia = np.array([b.inertia for b in self.bodies], dtype=np.float64).reshape(-1, 3)
        self.default_pose = np.asarray(self.default_pose, dtype=np.float64)
        self.upper_dofs = np.asarray(self.upper_dofs, dtype=np.int64)
        self.lower_dofs = np.asarray(self.lower_dofs, dtype=np.int64)
        self.validate()

    @property
    def dof_count(self) -> int:
        return len(self.joints)

    @property
    def body_count(self) -> int:
        return len(self.bodies)

    @property
    def body_names(self) -> list[str]:
        return [b.name for b in self.bodies]

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def total_mass(self) -> float:
        return float(self.body_mass.sum())

    def points3_indices(self) -> np.ndarray:
        return np.array([self.keypoints[n] for n in self.points3], dtype=np.int64)

    def points8_indices(self) -> np.ndarray:
        return np.array([self.keypoints[n] for n in self.points8], dtype=np.int64)

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def body_index(self, name: str) -> int:
        return self.body_names.index(name)

    def validate(self):
        for j in self.joints:
            if not (j.limit[0] < j.limit[1]):
                raise ValueError(f"joint {j.name}: q_min must be < q_max")
            if j.vel_limit <= 0 or j.torque_limit <= 0:
                raise ValueError(f"joint {j.name}: velocity/torque limits must be positive")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ValueError(f"joint {j.name}: axis must be unit length")
        for i, b in enumerate(self.bodies):
            if b.parent >= i:
                raise ValueError(f"body {b.name}: parents must precede children")
        if self.bodies[0].parent != -1:
            raise ValueError("body 0 must be the floating root")
        for name, idx in self.keypoints.items():
            if not (0 <= idx < self.body_count):
                raise ValueError(f"keypoint {name}: invalid body index {idx}")
        p3 = set(self.points3_indices().tolist())
        p8 = set(self.points8_indices().tolist())
        if not p3 <= p8:
            raise ValueError("3-point keypoint set must be a subset of the 8-point set")
        if not p8 <= set(range(self.body_count)):
            raise ValueError("8-point keypoint set must reference valid bodies")
        part = sorted(self.upper_dofs.tolist() + self.lower_dofs.tolist())
        if part != list(range(self.dof_count)):
            raise ValueError("upper/lower partition must cover all DoF exactly once")
        if len(self.default_pose) != self.dof_count:
            raise ValueError("default_pose length mismatch")

    # ---- serialization (model file, model_version 1) ----

    def to_dict(self) -> dict:
        return {
            "model_version": MODEL_VERSION,
            "name": self.name,
            "bodies": [
                {
                    "name": b.name,
                    "parent": b.parent,
                    "offset": list(map(float, b.offset)),
                    "joint": b.joint,
                    "mass": float(b.mass),
                    "com": list(map(float, b.com)),
                    "inertia": list(map(float, b.inertia)),
                }
                for b in self.bodies
            ],
            "joints": [
                {
                    "name": j.name,
                    "child_body": j.child_body,
                    "axis": list(map(float, j.axis)),
                    "limit": [float(j.limit[0]), float(j.limit[1])],
                    "vel_limit": float(j.vel_limit),
                    "torque_limit": float(j.torque_limit),
                    "kp": float(j.kp),
                    "kd": float(j.kd),
                }
                for j in self.joints
            ],
            "keypoints": dict(self.keypoints),
            "points3": list(self.points3),
            "points8": list(self.points8),
            "upper_dofs": self.upper_dofs.tolist(),
            "lower_dofs": self.lower_dofs.tolist(),
            "feet": [{"body": int(f.body), "points": f.points.tolist()} for f in self.feet],
            "default_pose": self.default_pose.tolist(),
            "default_root_height": float(self.default_root_height),
        }

    @staticmethod
    def from_dict(data: dict) -> "HumanoidModel":
        version = data.get("model_version")
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model_version {version!r} (expected {MODEL_VERSION})")
        bodies = [
            Body(
                name=b["name"],
                parent=int(b["parent"]),
                offset=np.array(b["offset"], dtype=np.float64),
                joint=int(b["joint"]),
                mass=float(b["mass"]),
                com=np.array(b["com"], dtype=np.float64),
                inertia=np.array(b["inertia"], dtype=np.float64),
            )
            for b in data["bodies"]
        ]
        joints = [
            Joint(
                name=j["name"],
                child_body=int(j["child_body"]),
                axis=np.array(j["axis"], dtype=np.float64),
                limit=(float(j["limit"][0]), float(j["limit"][1])),
                vel_limit=float(j["vel_limit"]),
                torque_limit=float(j["torque_limit"]),
                kp=float(j["kp"]),
                kd=float(j["kd"]),
            )
            for j in data["joints"]
        ]
        return HumanoidModel(
            name=data["name"],
            bodies=bodies,
            joints=joints,
            keypoints={k: int(v) for k, v in data["keypoints"].items()},
            points3=list(data["points3"]),
            points8=list(data["points8"]),
            upper_dofs=np.array(data["upper_dofs"], dtype=np.int64),
            lower_dofs=np.array(data["lower_dofs"], dtype=np.int64),
            feet=[FootSpec(body=int(f["body"]), points=np.array(f["points"], dtype=np.float64)) for f in data["feet"]],
            default_pose=np.array(data["default_pose"], dtype=np.float64),
            default_root_height=float(data["default_root_height"]),
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def save_model(model: HumanoidModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model.to_dict(), f, indent=1)


def load_model(path) -> HumanoidModel:
    with open(path) as f:
        return HumanoidModel.from_dict(json.load(f))


@dataclass
class BodyPose:
    """World-frame pose and velocity of every body."""

    pos: np.ndarray       # (..., B, 3)
    quat: np.ndarray      # (..., B, 4)
    lin_vel: np.ndarray   # (..., B, 3)
    ang_vel: np.ndarray   # (..., B, 3)


def forward_kinematics(
    model: HumanoidModel,
    root_pos: np.ndarray,
    root_quat: np.ndarray,
    dof_pos: np.ndarray,
    dof_vel: np.ndarray | None = None,
    root_vel: np.ndarray | None = None,
    root_ang_vel: np.ndarray | None = None,
) -> BodyPose:
    """Rigid-chain FK; broadcasts over leading batch dimensions of dof_pos."""
    root_pos = np.asarray(root_pos, dtype=np.float64)
    root_quat = np.asarray(root_quat, dtype=np.float64)
    dof_pos = np.asarray(dof_pos, dtype=np.float64)
    if dof_pos.shape[-1] != model.dof_count:
        raise ValueError(f"dof_pos has {dof_pos.shape[-1]} entries, expected {model.dof_count}")
    batch = dof_pos.shape[:-1]
    if dof_vel is None:
        dof_vel = np.zeros_like(dof_pos)
    else:
        dof_vel = np.asarray(dof_vel, dtype=np.float64)
    if root_vel is None:
        root_vel = np.zeros(batch + (3,))
    if root_ang_vel is None:
        root_ang_vel = np.zeros(batch + (3,))
    root_vel = np.broadcast_to(np.asarray(root_vel, dtype=np.float64), batch + (3,))
    root_ang_vel = np.broadcast_to(np.asarray(root_ang_vel, dtype=np.float64), batch + (3,))

    B = model.body_count
    pos = np.empty(batch + (B, 3))
    quat = np.empty(batch + (B, 4))
    lin = np.empty(batch + (B, 3))
    ang = np.empty(batch + (B, 3))
    pos[..., 0, :] = np.broadcast_to(root_pos, batch + (3,))
    quat[..., 0, :] = np.broadcast_to(root_quat, batch + (4,))
    lin[..., 0, :] = root_vel
    ang[..., 0, :] = root_ang_vel

    # local joint rotations for all joints at once: (..., J, 4)
    half = 0.5 * dof_pos
    s = np.sin(half)
    q_local = np.empty(batch + (model.dof_count, 4))
    q_local[..., 0] = np.cos(half)
    q_local[..., 1:] = model.joint_axis * s[..., None]

    for b in range(1, B):
        p = model.body_parent[b]
        j = model.body_joint[b]
        arm = geom.quat_rotate(quat[..., p, :], model.body_offset[b])
        pos[..., b, :] = pos[..., p, :] + arm
        lin[..., b, :] = lin[..., p, :] + geom.cross3(ang[..., p, :], arm)
        if j >= 0:
            quat[..., b, :] = geom.quat_mul(quat[..., p, :], q_local[..., j, :])
            # revolute axis is invariant under the joint rotation: child frame works
            world_axis = geom.quat_rotate(quat[..., b, :], model.joint_axis[j])
            ang[..., b, :] = ang[..., p, :] + world_axis * dof_vel[..., j, None]
        else:
            quat[..., b, :] = quat[..., p, :]
            ang[..., b, :] = ang[..., p, :]
    return BodyPose(pos=pos, quat=quat, lin_vel=lin, ang_vel=ang)


def keypoint_positions(model: HumanoidModel, pose: BodyPose, names: list[str]) -> np.ndarray:
    idx = [model.keypoints[n] for n in names]
    return pose.pos[..., idx, :]


# ---- reference and bench configurations ----


def _leg(bodies, joints, side, sign):
    """Append one 5-link leg; returns nothing (mutates lists)."""
    B = len(bodies)
    J = len(joints)
    z = np.array([0.0, 0.0, 1.0])
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    small = np.array([0.004, 0.004, 0.004])
    bodies += [
        Body(f"{side}_hip_yaw_link", 0, np.array([0.0, sign * 0.10, -0.08]), J + 0, 1.4, np.zeros(3), small),
        Body(f"{side}_hip_roll_link", B + 0, np.array([0.0, 0.0, -0.06]), J + 1, 1.4, np.zeros(3), small),
        Body(f"{side}_thigh", B + 1, np.array([0.0, 0.0, -0.06]), J + 2, 3.2, np.array([0.0, 0.0, -0.20]), np.array([0.043, 0.043, 0.006])),
        Body(f"{side}_shin", B + 2, np.array([0.0, 0.0, -0.40]), J + 3, 2.4, np.array([0.0, 0.0, -0.21]), np.array([0.035, 0.035, 0.004])),
        Body(f"{side}_foot", B + 3, np.array([0.0, 0.0, -0.42]), J + 4, 0.9, np.array([0.03, 0.0, -0.045]), np.array([0.001, 0.003, 0.004])),
    ]
    joints += [
        Joint(f"{side}_hip_yaw", B + 0, z, (-0.6, 0.6), 23.0, 120.0, 150.0, 3.0),
        Joint(f"{side}_hip_roll", B + 1, x, (-0.5, 0.5), 23.0, 120.0, 150.0, 3.0),
        Joint(f"{side}_hip_pitch", B + 2, y, (-1.8, 1.0), 23.0, 200.0, 180.0, 4.0),
        Joint(f"{side}_knee", B + 3, y, (-0.08, 2.3), 14.0, 250.0, 220.0, 5.0),
        Joint(f"{side}_ankle", B + 4, y, (-0.9, 0.6), 9.0, 60.0, 60.0, 2.0),
    ]


def _arm(bodies, joints, torso_idx, side, sign):
    B = len(bodies)
    J = len(joints)
    z = np.array([0.0, 0.0, 1.0])
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    small = np.array([0.003, 0.003, 0.003])
    roll_limit = (-0.35, 3.1) if sign > 0 else (-3.1, 0.35)
    bodies += [
        Body(f"{side}_shoulder_pitch_link", torso_idx, np.array([0.0, sign * 0.20, 0.36]), J + 0, 1.0, np.zeros(3), small),
        Body(f"{side}_shoulder_roll_link", B + 0, np.array([0.0, sign * 0.03, -0.015]), J + 1, 1.0, np.zeros(3), small),
        Body(f"{side}_upper_arm", B + 1, np.array([0.0, 0.0, -0.05]), J + 2, 1.1, np.array([0.0, 0.0, -0.13]), np.array([0.006, 0.006, 0.001])),
        Body(f"{side}_forearm", B + 2, np.array([0.0, 0.0, -0.26]), J + 3, 0.9, np.array([0.0, 0.0, -0.13]), np.array([0.005, 0.005, 0.001])),
        Body(f"{side}_hand", B + 3, np.array([0.0, 0.0, -0.28]), -1, 0.3, np.array([0.0, 0.0, -0.04]), np.array([0.0006, 0.0006, 0.0006])),
    ]
    joints += [
        Joint(f"{side}_shoulder_pitch", B + 0, y, (-2.5, 2.0), 9.0, 60.0, 80.0, 2.0),
        Joint(f"{side}_shoulder_roll", B + 1, x, roll_limit, 9.0, 60.0, 80.0, 2.0),
        Joint(f"{side}_shoulder_yaw", B + 2, z, (-2.5, 2.5), 20.0, 40.0, 60.0, 1.5),
        Joint(f"{side}_elbow", B + 3, y, (-1.25, 2.6), 20.0, 60.0, 80.0, 2.0),
    ]


def reference_config() -> HumanoidModel:
    """Canonical 19-DoF / 22-body ~47 kg biped."""
    bodies = [Body("pelvis", -1, np.zeros(3), -1, 4.8, np.zeros(3), np.array([0.045, 0.034, 0.061]))]
    joints: list[Joint] = []
    _leg(bodies, joints, "left", +1)
    _leg(bodies, joints, "right", -1)
    torso_idx = len(bodies)
    bodies.append(Body("torso_link", 0, np.array([0.0, 0.0, 0.12]), len(joints), 15.0, np.array([0.0, 0.0, 0.25]), np.array([0.49, 0.46, 0.19])))
    joints.append(Joint("torso", torso_idx, np.array([0.0, 0.0, 1.0]), (-2.0, 2.0), 23.0, 200.0, 200.0, 5.0))
    _arm(bodies, joints, torso_idx, "left", +1)
    _arm(bodies, joints, torso_idx, "right", -1)

    names = [b.name for b in bodies]
    keypoints = {
        "head": names.index("torso_link"),
        "left_hand": names.index("left_hand"),
        "right_hand": names.index("right_hand"),
        "left_elbow": names.index("left_forearm"),
        "right_elbow": names.index("right_forearm"),
        "left_ankle": names.index("left_foot"),
        "right_ankle": names.index("right_foot"),
        "pelvis": names.index("pelvis"),
    }
    default_pose = np.zeros(19)
    for side in ("left", "right"):
        jn = [j.name for j in joints]
        default_pose[jn.index(f"{side}_hip_pitch")] = -0.2
        default_pose[jn.index(f"{side}_knee")] = 0.4
        default_pose[jn.index(f"{side}_ankle")] = -0.2
        default_pose[jn.index(f"{side}_shoulder_pitch")] = 0.3
        default_pose[jn.index(f"{side}_elbow")] = 0.5
    # bent-knee stack: 0.20 hip drop + (0.40+0.42)*cos(0.2) + 0.07 sole
    root_height = 0.27 + 0.82 * float(np.cos(0.2))
    # symmetric sole keeps the support centroid under the default-pose CoM
    sole = np.array([[0.10, 0.05, -0.07], [0.10, -0.05, -0.07], [-0.10, 0.05, -0.07], [-0.10, -0.05, -0.07]])
    return HumanoidModel(
        name="biped47",
        bodies=bodies,
        joints=joints,
        keypoints=keypoints,
        points3=["head", "left_hand", "right_hand"],
        points8=["head", "left_hand", "right_hand", "left_elbow", "right_elbow", "left_ankle", "right_ankle", "pelvis"],
        upper_dofs=np.arange(10, 19),
        lower_dofs=np.arange(0, 10),
        feet=[FootSpec(names.index("left_foot"), sole.copy()), FootSpec(names.index("right_foot"), sole.copy())],
        default_pose=default_pose,
        default_root_height=root_height,
    )


def toy_arm_model() -> HumanoidModel:
    """Fixed-base 2-link planar arm for fast policy-training tests."""
    y = np.array([0.0, 1.0, 0.0])
    bodies = [
        Body("base", -1, np.zeros(3), -1, 2.0, np.zeros(3), np.array([0.02, 0.02, 0.02])),
        Body("link1", 0, np.array([0.0, 0.0, 0.1]), 0, 1.0, np.array([0.0, 0.0, 0.25]), np.array([0.02, 0.02, 0.002])),
        Body("link2", 1, np.array([0.0, 0.0, 0.5]), 1, 0.8, np.array([0.0, 0.0, 0.2]), np.array([0.012, 0.012, 0.001])),
    ]
    joints = [
        # kd near critical damping: underdamped holds drift under policy control
        Joint("shoulder", 1, y, (-2.4, 2.4), 12.0, 60.0, 40.0, 6.0),
        Joint("elbow", 2, y, (-2.4, 2.4), 12.0, 40.0, 30.0, 3.0),
    ]
    keypoints = {"head": 1, "left_hand": 2, "right_hand": 2, "pelvis": 0, "tip": 2}
    return HumanoidModel(
        name="toy_arm",
        bodies=bodies,
        joints=joints,
        keypoints=keypoints,
        points3=["head", "left_hand", "right_hand"],
        points8=["head", "left_hand", "right_hand", "pelvis", "tip", "head", "left_hand", "pelvis"],
        upper_dofs=np.array([0, 1]),
        lower_dofs=np.array([], dtype=np.int64),
        feet=[],
        default_pose=np.zeros(2),
        default_root_height=0.0,
    )


def mini_biped_model() -> HumanoidModel:
    """Sagittal 7-body biped with wide feet; cheap enough for CI training runs."""
    y = np.array([0.0, 1.0, 0.0])
    bodies = [Body("pelvis", -1, np.zeros(3), -1, 8.0, np.array([0.0, 0.0, 0.05]), np.array([0.12, 0.1, 0.08]))]
    joints: list[Joint] = []
    for side, sign in (("left", 1.0), ("right", -1.0)):
        B = len(bodies)
        J = len(joints)
        bodies += [
            Body(f"{side}_thigh", 0, np.array([0.0, sign * 0.12, -0.05]), J + 0, 2.5, np.array([0.0, 0.0, -0.17]), np.array([0.03, 0.03, 0.004])),
            Body(f"{side}_shin", B + 0, np.array([0.0, 0.0, -0.34]), J + 1, 1.8, np.array([0.0, 0.0, -0.17]), np.array([0.02, 0.02, 0.003])),
            Body(f"{side}_foot", B + 1, np.array([0.0, 0.0, -0.34]), J + 2, 0.8, np.array([0.03, 0.0, -0.03]), np.array([0.002, 0.004, 0.005])),
        ]
        joints += [
            Joint(f"{side}_hip_pitch", B + 0, y, (-1.6, 1.2), 20.0, 120.0, 120.0, 4.0),
            Joint(f"{side}_knee", B + 1, y, (-0.08, 2.2), 16.0, 140.0, 140.0, 4.0),
            Joint(f"{side}_ankle", B + 2, y, (-0.9, 0.7), 12.0, 60.0, 50.0, 2.0),
        ]
    names = [b.name for b in bodies]
    keypoints = {
        "head": 0,
        "left_hand": names.index("left_foot"),
        "right_hand": names.index("right_foot"),
        "pelvis": 0,
        "left_knee": names.index("left_shin"),
        "right_knee": names.index("right_shin"),
    }
    default_pose = np.array([-0.2, 0.4, -0.2, -0.2, 0.4, -0.2])
    # 0.05 hip drop + (0.34+0.34)*cos(0.2) + 0.05 sole
    root_height = 0.10 + 0.68 * float(np.cos(0.2))
    sole = np.array([[0.11, 0.06, -0.05], [0.11, -0.06, -0.05], [-0.07, 0.06, -0.05], [-0.07, -0.06, -0.05]])
    return HumanoidModel(
        name="mini_biped",
        bodies=bodies,
        joints=joints,
        keypoints=keypoints,
        points3=["head", "left_hand", "right_hand"],
        points8=["head", "left_hand", "right_hand", "pelvis", "left_knee", "right_knee", "left_hand", "right_hand"],
        upper_dofs=np.array([], dtype=np.int64),
        lower_dofs=np.arange(6),
        feet=[FootSpec(names.index("left_foot"), sole.copy()), FootSpec(names.index("right_foot"), sole.copy())],
        default_pose=default_pose,
        default_root_height=root_height,
    )
