"""Motion clips: storage, retargeting, filtering, and stable-pose augmentation.

A clip stores per-frame full-body kinematics (the tracking reference). Clips
are written as JSON-lines: one header line, then one frame per line, so files
diff and stream cleanly. Velocities are central finite differences of the
stored kinematics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .model import HumanoidModel, forward_kinematics

CLIP_VERSION = 1
SOURCE_VERSION = 1

# lower-body pose presets keyed by joint-name suffix
STABLE_POSES = {
    "standing": None,  # resolved to model.default_pose per joint
    "squatting": {"hip_pitch": -0.8, "knee": 1.6, "ankle": -0.8},
}


@dataclass
class MotionGoalFrame:
    """Reference kinematics for one control tick."""

    body_pos: np.ndarray      # (B, 3)
    body_quat: np.ndarray     # (B, 4)
    body_lin_vel: np.ndarray  # (B, 3)
    body_ang_vel: np.ndarray  # (B, 3)
    dof_pos: np.ndarray       # (J,)
    dof_vel: np.ndarray       # (J,)

    @property
    def root_pos(self) -> np.ndarray:
        return self.body_pos[0]

    @property
    def root_quat(self) -> np.ndarray:
        return self.body_quat[0]

    @property
    def root_vel(self) -> np.ndarray:
        return self.body_lin_vel[0]

    @property
    def root_ang_vel(self) -> np.ndarray:
        return self.body_ang_vel[0]


@dataclass
class MotionClip:
    name: str
    fps: float
    body_pos: np.ndarray      # (T, B, 3)
    body_quat: np.ndarray     # (T, B, 4)
    body_lin_vel: np.ndarray  # (T, B, 3)
    body_ang_vel: np.ndarray  # (T, B, 3)
    dof_pos: np.ndarray       # (T, J)
    dof_vel: np.ndarray       # (T, J)
    tags: list[str] = field(default_factory=list)
    model_hash: str = ""
    flags: np.ndarray | None = None       # (T,) retarget-infeasible marks
    residuals: np.ndarray | None = None   # (T,) worst keypoint residual, m

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("clips need at least 2 frames")
        if self.fps <= 0:
            raise ValueError("frame rate must be positive")
        if self.flags is None:
            self.flags = np.zeros(self.length, dtype=bool)
        if self.residuals is None:
            self.residuals = np.zeros(self.length)
        if not (np.isfinite(self.body_pos).all() and np.isfinite(self.dof_pos).all()):
            raise ValueError("clip contains non-finite values")

    @property
    def length(self) -> int:
        return self.body_pos.shape[0]

    @property
    def duration(self) -> float:
        return self.length / self.fps

    def frame(self, i: int) -> MotionGoalFrame:
        i = min(max(int(i), 0), self.length - 1)
        return MotionGoalFrame(
            body_pos=self.body_pos[i],
            body_quat=self.body_quat[i],
            body_lin_vel=self.body_lin_vel[i],
            body_ang_vel=self.body_ang_vel[i],
            dof_pos=self.dof_pos[i],
            dof_vel=self.dof_vel[i],
        )

    def category(self) -> str:
        if "stable-standing" in self.tags:
            return "stable-standing"
        if "stable-squat" in self.tags:
            return "stable-squat"
        return "original"


@dataclass
class SourceKeypointTrack:
    """Raw keypoint positions to retarget, e.g. from mocap or synthesis."""

    fps: float
    names: list[str]
    pos: np.ndarray           # (T, K, 3)

    def __post_init__(self):
        if self.pos.ndim != 3 or self.pos.shape[1] != len(self.names):
            raise ValueError("keypoint array shape must be (frames, names, 3)")


def finite_difference_velocities(fps: float, body_pos: np.ndarray, body_quat: np.ndarray, dof_pos: np.ndarray):
    """Central differences inside, one-sided at the ends."""
    dt = 1.0 / fps
    T = body_pos.shape[0]
    lin = np.gradient(body_pos, dt, axis=0)
    dof = np.gradient(dof_pos, dt, axis=0)
    ang = np.zeros_like(lin)
    lo = np.arange(T) - 1
    hi = np.arange(T) + 1
    lo[0] = 0
    hi[-1] = T - 1
    span = ((hi - lo) * dt)[:, None, None]
    ang = geom.quat_box_minus(body_quat[hi], body_quat[lo]) / span
    return lin, ang, dof


def clip_from_kinematics(
    model: HumanoidModel,
    fps: float,
    root_pos: np.ndarray,
    root_quat: np.ndarray,
    dof_pos: np.ndarray,
    name: str,
    tags: list[str] | None = None,
    flags: np.ndarray | None = None,
    residuals: np.ndarray | None = None,
) -> MotionClip:
    """FK over a trajectory plus finite-difference velocities."""
    pose = forward_kinematics(model, root_pos, root_quat, dof_pos)
    lin, ang, dof_vel = finite_difference_velocities(fps, pose.pos, pose.quat, dof_pos)
    return MotionClip(
        name=name,
        fps=fps,
        body_pos=pose.pos,
        body_quat=pose.quat,
        body_lin_vel=lin,
        body_ang_vel=ang,
        dof_pos=np.asarray(dof_pos, dtype=np.float64),
        dof_vel=dof_vel,
        tags=list(tags or []),
        model_hash=model.hash(),
        flags=flags,
        residuals=residuals,
    )


# ---- retargeting ----


@dataclass
class IkConfig:
    damping: float = 1e-2
    max_iters: int = 50
    residual_cap: float = 0.05   # m, above this after max_iters the frame is flagged
    tol: float = 1e-4            # early-out residual
    step_clamp: float = 0.5      # max |dx| per iteration


def _keypoint_jacobian(model: HumanoidModel, pose, kp_bodies, root_pos):
    """Jacobian of keypoint positions wrt [root xyz, root yaw, dofs]."""
    K = len(kp_bodies)
    J = model.dof_count
    jac = np.zeros((K * 3, 4 + J))
    z = np.array([0.0, 0.0, 1.0])
    # ancestor joint chains per body
    for k, b in enumerate(kp_bodies):
        p = pose.pos[b]
        jac[3 * k:3 * k + 3, 0:3] = np.eye(3)
        jac[3 * k:3 * k + 3, 3] = geom.cross3(z, p - root_pos)
        i = b
        while i != -1:
            j = model.body_joint[i]
            if j >= 0:
                child = model.joints[j].child_body
                axis_w = geom.quat_rotate(pose.quat[i], model.joint_axis[j])
                jac[3 * k:3 * k + 3, 4 + j] = geom.cross3(axis_w, p - pose.pos[child])
            i = model.body_parent[i]
    return jac


def retarget(model: HumanoidModel, source: SourceKeypointTrack, cfg: IkConfig | None = None) -> MotionClip:
    """Damped-least-squares IK per frame over [root translation, root yaw, DoF].

    The root is kept upright (pitch/roll are not solved for). Frames whose
    worst keypoint residual exceeds the cap after max_iters are flagged but
    kept, so callers can filter.
    """
    cfg = cfg or IkConfig()
    for n in source.names:
        if n not in model.keypoints:
            raise KeyError(f"source keypoint {n!r} not in model keypoint map")
    kp_bodies = [model.keypoints[n] for n in source.names]
    T = source.pos.shape[0]
    J = model.dof_count

    root_pos = np.zeros((T, 3))
    root_quat = np.zeros((T, 4))
    dof = np.zeros((T, J))
    flags = np.zeros(T, dtype=bool)
    residuals = np.zeros(T)

    # warm start: centroid of targets at default height, default pose
    x = np.zeros(4 + J)
    x[0:2] = source.pos[0, :, :2].mean(axis=0)
    x[2] = model.default_root_height
    x[4:] = model.default_pose
    lam2 = cfg.damping ** 2

    for t in range(T):
        target = source.pos[t].reshape(-1)
        for _ in range(cfg.max_iters):
            q = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), x[3])
            pose = forward_kinematics(model, x[0:3], q, x[4:])
            r = target - pose.pos[kp_bodies].reshape(-1)
            worst = np.max(np.linalg.norm(r.reshape(-1, 3), axis=1))
            if worst < cfg.tol:
                break
            jac = _keypoint_jacobian(model, pose, kp_bodies, x[0:3])
            jjt = jac @ jac.T + lam2 * np.eye(jac.shape[0])
            dx = jac.T @ np.linalg.solve(jjt, r)
            step = np.linalg.norm(dx)
            if step > cfg.step_clamp:
                dx *= cfg.step_clamp / step
            x = x + dx
            x[4:] = np.clip(x[4:], model.joint_limit_lo, model.joint_limit_hi)
        q = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), x[3])
        pose = forward_kinematics(model, x[0:3], q, x[4:])
        r = target - pose.pos[kp_bodies].reshape(-1)
        residuals[t] = np.max(np.linalg.norm(r.reshape(-1, 3), axis=1))
        flags[t] = residuals[t] > cfg.residual_cap
        root_pos[t] = x[0:3]
        root_quat[t] = q
        dof[t] = x[4:]

    return clip_from_kinematics(
        model, source.fps, root_pos, root_quat, dof,
        name="retargeted", tags=["retargeted"], flags=flags, residuals=residuals,
    )


# ---- infeasibility filter ----


@dataclass
class FilterThresholds:
    limit_violation_fraction: float = 0.10  # frames allowed beyond joint limits
    velocity_margin: float = 1.0            # x vel_limit
    root_speed_cap: float = 3.0             # m/s
    flagged_fraction: float = 0.10          # retarget-flagged frames allowed


def filter_infeasible(clip: MotionClip, model: HumanoidModel, thresholds: FilterThresholds | None = None):
    """Machine-checkable feasibility: (kept, reasons)."""
    th = thresholds or FilterThresholds()
    reasons = []
    outside = (clip.dof_pos < model.joint_limit_lo - 1e-9) | (clip.dof_pos > model.joint_limit_hi + 1e-9)
    frac = float(outside.any(axis=1).mean())
    if frac > th.limit_violation_fraction:
        reasons.append("joint-limit")
    if np.max(np.abs(clip.dof_vel) / model.vel_limit) > th.velocity_margin:
        reasons.append("velocity")
    if np.max(np.linalg.norm(clip.body_lin_vel[:, 0, :], axis=-1)) > th.root_speed_cap:
        reasons.append("root-speed")
    if float(clip.flags.mean()) > th.flagged_fraction:
        reasons.append("retarget-residual")
    return len(reasons) == 0, reasons


# ---- stable variant augmentation ----


def _lower_pose(model: HumanoidModel, which: str) -> np.ndarray:
    if which not in STABLE_POSES:
        raise ValueError(f"unknown lower pose {which!r}")
    pose = model.default_pose[model.lower_dofs].copy()
    preset = STABLE_POSES[which]
    if preset is not None:
        names = model.joint_names
        for k, j in enumerate(model.lower_dofs):
            for suffix, value in preset.items():
                if names[j].endswith(suffix):
                    pose[k] = value
    return pose


def _ground_consistent_height(model: HumanoidModel, dof: np.ndarray, root_quat: np.ndarray) -> float:
    """Root z that puts the lowest sole point on the ground plane."""
    pose = forward_kinematics(model, np.zeros(3), root_quat, dof)
    lowest = np.inf
    for foot in model.feet:
        world = pose.pos[foot.body] + geom.quat_rotate(pose.quat[foot.body], foot.points)
        lowest = min(lowest, float(world[:, 2].min()))
    if not np.isfinite(lowest):
        return float(model.default_root_height)
    return -lowest


def make_stable_variant(clip: MotionClip, model: HumanoidModel, lower: str = "standing") -> MotionClip:
    """Freeze root and lower body into a stable pose, keep the upper body.

    Root keeps the frame-0 horizontal position and heading; its height is
    recomputed so the frozen legs stand on the ground (a squat at standing
    height would float). Lower-body velocities become zero by construction.
    """
    T = clip.length
    dof = clip.dof_pos.copy()
    dof[:, model.lower_dofs] = _lower_pose(model, lower)
    heading = geom.heading_quat(clip.body_quat[0, 0])
    root_quat = np.broadcast_to(heading, (T, 4)).copy()
    root_pos = np.empty((T, 3))
    root_pos[:, 0:2] = clip.body_pos[0, 0, 0:2]
    root_pos[:, 2] = _ground_consistent_height(model, dof[0], heading)
    tag = "stable-standing" if lower == "standing" else "stable-squat"
    tags = sorted((set(clip.tags) - {"stable-standing", "stable-squat"}) | {tag})
    name = clip.name if clip.name.endswith(tag) else f"{clip.name}-{tag}"
    return clip_from_kinematics(model, clip.fps, root_pos, root_quat, dof, name=name, tags=tags)


# ---- dataset sampling ----


def sample_training_clip(
    dataset: list[MotionClip],
    rng: np.random.Generator,
    mix: tuple[float, float, float] = (0.5, 0.25, 0.25),
    min_horizon_frames: int = 2,
) -> tuple[MotionClip, int]:
    """Pick (clip, start frame): category by mix weights, then uniform."""
    if not dataset:
        raise ValueError("empty dataset")
    categories = ("original", "stable-standing", "stable-squat")
    pools = {c: [c2 for c2 in dataset if c2.category() == c] for c in categories}
    weights = np.array([mix[i] if pools[c] else 0.0 for i, c in enumerate(categories)], dtype=np.float64)
    if weights.sum() <= 0:
        # fall back to uniform over everything
        clip = dataset[rng.integers(len(dataset))]
    else:
        weights = weights / weights.sum()
        cat = categories[rng.choice(3, p=weights)]
        pool = pools[cat]
        clip = pool[rng.integers(len(pool))]
    max_start = max(clip.length - int(min_horizon_frames), 1)
    start = int(rng.integers(0, max_start))
    return clip, start


# ---- file formats ----


def save_clip(clip: MotionClip, path) -> None:
    with open(path, "w") as f:
        header = {
            "clip_version": CLIP_VERSION,
            "name": clip.name,
            "fps": clip.fps,
            "tags": clip.tags,
            "model_hash": clip.model_hash,
            "frames": clip.length,
            "bodies": int(clip.body_pos.shape[1]),
            "dofs": int(clip.dof_pos.shape[1]),
        }
        f.write(json.dumps(header) + "\n")
        for t in range(clip.length):
            row = {
                "p": clip.body_pos[t].tolist(),
                "q": clip.body_quat[t].tolist(),
                "v": clip.body_lin_vel[t].tolist(),
                "w": clip.body_ang_vel[t].tolist(),
                "d": clip.dof_pos[t].tolist(),
                "dv": clip.dof_vel[t].tolist(),
                "flag": bool(clip.flags[t]),
                "res": float(clip.residuals[t]),
            }
            f.write(json.dumps(row) + "\n")


def load_clip(path) -> MotionClip:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("clip_version") != CLIP_VERSION:
            raise ValueError(f"unsupported clip_version {header.get('clip_version')!r}")
        rows = [json.loads(line) for line in f if line.strip()]
    if len(rows) != header["frames"]:
        raise ValueError("frame count mismatch between header and body")
    return MotionClip(
        name=header["name"],
        fps=float(header["fps"]),
        body_pos=np.array([r["p"] for r in rows], dtype=np.float64),
        body_quat=np.array([r["q"] for r in rows], dtype=np.float64),
        body_lin_vel=np.array([r["v"] for r in rows], dtype=np.float64),
        body_ang_vel=np.array([r["w"] for r in rows], dtype=np.float64),
        dof_pos=np.array([r["d"] for r in rows], dtype=np.float64),
        dof_vel=np.array([r["dv"] for r in rows], dtype=np.float64),
        tags=list(header.get("tags", [])),
        model_hash=header.get("model_hash", ""),
        flags=np.array([r["flag"] for r in rows], dtype=bool),
        residuals=np.array([r["res"] for r in rows], dtype=np.float64),
    )


def save_source(track: SourceKeypointTrack, path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"source_version": SOURCE_VERSION, "fps": track.fps, "names": track.names}) + "\n")
        for t in range(track.pos.shape[0]):
            f.write(json.dumps({"p": track.pos[t].tolist()}) + "\n")


def load_source(path) -> SourceKeypointTrack:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("source_version") != SOURCE_VERSION:
            raise ValueError(f"unsupported source_version {header.get('source_version')!r}")
        rows = [json.loads(line) for line in f if line.strip()]
    return SourceKeypointTrack(
        fps=float(header["fps"]),
        names=list(header["names"]),
        pos=np.array([r["p"] for r in rows], dtype=np.float64),
    )


def resample_clip(clip: MotionClip, model: HumanoidModel, fps: float) -> MotionClip:
    """Linear resample of root/DoF tracks; orientations nearest-frame; velocities redone."""
    if fps == clip.fps:
        return clip
    T_new = max(int(round(clip.duration * fps)), 2)
    src_t = np.arange(clip.length) / clip.fps
    new_t = np.arange(T_new) / fps
    new_t = np.clip(new_t, 0, src_t[-1])
    root_pos = np.stack([np.interp(new_t, src_t, clip.body_pos[:, 0, i]) for i in range(3)], axis=-1)
    dof = np.stack([np.interp(new_t, src_t, clip.dof_pos[:, j]) for j in range(clip.dof_pos.shape[1])], axis=-1)
    nearest = np.clip(np.round(new_t * clip.fps).astype(int), 0, clip.length - 1)
    root_quat = clip.body_quat[nearest, 0]
    return clip_from_kinematics(model, fps, root_pos, root_quat, dof, name=clip.name, tags=list(clip.tags))


# ---- bundled toy clips ----


def hold_pose_clip(model: HumanoidModel, frames: int = 300, fps: float = 50.0,
                   dof: np.ndarray | None = None, name: str = "stand") -> MotionClip:
    """One pose held at the default root height (regression and baseline runs)."""
    pose = model.default_pose if dof is None else np.asarray(dof, dtype=np.float64)
    dof_track = np.tile(pose, (frames, 1))
    root = np.zeros((frames, 3))
    root[:, 2] = model.default_root_height
    quat = np.tile(geom.quat_identity(), (frames, 1))
    return clip_from_kinematics(model, fps, root, quat, dof_track, name)


def _arm_kinematic_clip(model: HumanoidModel, dof: np.ndarray, fps: float, name: str) -> MotionClip:
    n = dof.shape[0]
    root = np.zeros((n, 3))
    root[:, 2] = model.default_root_height
    quat = np.tile(geom.quat_identity(), (n, 1))
    return clip_from_kinematics(model, fps, root, quat, dof, name)


def toy_arm_wave_clip(model: HumanoidModel, frames: int = 400, fps: float = 50.0) -> MotionClip:
    """Smooth two-joint figure at 0.5 Hz, amplitude 1.2 rad."""
    t = np.arange(frames) / fps
    dof = np.stack([1.2 * np.sin(2 * np.pi * 0.5 * t),
                    1.2 * (np.cos(2 * np.pi * 0.5 * t) - 1.0)], axis=1)
    return _arm_kinematic_clip(model, dof, fps, "wave")


def toy_arm_reach_clip(model: HumanoidModel, frames: int = 400, fps: float = 50.0) -> MotionClip:
    """Slow 0.4 Hz circling far from the default pose, near the upper limits."""
    t = np.arange(frames) / fps
    dof = np.stack([1.7 + 0.5 * np.sin(2 * np.pi * 0.4 * t),
                    1.7 + 0.5 * np.cos(2 * np.pi * 0.4 * t)], axis=1)
    return _arm_kinematic_clip(model, dof, fps, "reach")


def toy_arm_step_clip(model: HumanoidModel, seed: int = 0, n_poses: int = 16,
                      hold_frames: int = 55, fps: float = 50.0) -> MotionClip:
    """Hard steps between held poses; the dwells train servoing to static goals."""
    rng = np.random.default_rng(seed)
    poses = rng.uniform([-0.8, -2.0], [2.0, 1.0], size=(n_poses, 2))
    poses[0] = model.default_pose
    dof = np.concatenate([np.tile(p, (hold_frames, 1)) for p in poses])
    return _arm_kinematic_clip(model, dof, fps, "steps")


def toy_arm_suite(model: HumanoidModel, fps: float = 50.0) -> list[MotionClip]:
    """Tracking clips for the bundled 2-DoF arm: pose steps, a smooth wave,
    and held reaches. Steps lead so that episode sampling, which favors the
    first clip, covers servo-to-static-goal states; smooth clips alone leave
    holds undertrained."""
    return [toy_arm_step_clip(model, fps=fps),
            toy_arm_wave_clip(model, fps=fps),
            toy_arm_reach_clip(model, fps=fps)]
