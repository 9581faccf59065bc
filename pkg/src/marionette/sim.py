"""Reduced-order floating-base dynamics with PD actuation and foot contact.

Deliberately not a full articulated solver. The decomposition:

  * joints integrate decoupled 1-DoF dynamics: PD motor torque + gravity
    load (Jacobian-transpose) + soft limit springs over a precomputed
    effective inertia per joint
  * the root integrates rigid 6-DoF dynamics carrying the total mass:
    gravity plus foot contact forces, contact torque taken about the
    instantaneous whole-body center of mass
  * contact points live on the feet only; normal force is a spring-damper
    (never negative), tangential force is viscous with a Coulomb clamp

Physics run at 200 Hz (4 substeps of semi-implicit Euler per 50 Hz control
tick). Everything is float64 and deterministic given (state, action, seed).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .model import BodyPose, HumanoidModel, forward_kinematics

GRAVITY = 9.81


@dataclass
class SimParams:
    control_dt: float = 0.02
    substeps: int = 4
    gravity: float = GRAVITY
    contact_kn: float = 2.0e4    # N/m, normal spring
    contact_cn: float = 200.0    # N*s/m, normal damper
    contact_kt: float = 1.0e4    # N/m, tangential anchor spring (stick)
    contact_ct: float = 200.0    # N*s/m, tangential damper
    joint_limit_k: float = 300.0  # N*m/rad restoring torque beyond soft limit
    joint_damping: float = 0.05  # N*m*s/rad viscous, on top of PD Kd
    # stands in for ankle back-drive the decoupled joint model cannot provide
    angular_damping: float = 5.0  # N*m*s on root angular velocity
    min_joint_inertia: float = 0.02
    max_dof_vel_factor: float = 3.0  # hard clamp, numerical safety net
    contact_force_threshold: float = 1.0  # N, foot counts as in contact
    fixed_base: bool = False


@dataclass
class TerrainSpec:
    kind: str = "flat"           # flat | rough | low_obstacles
    rough_amplitude: float = 0.04
    obstacle_height: float = 0.05
    obstacle_spacing: float = 1.0
    obstacle_width: float = 0.3
    friction: float = 0.8
    phase: tuple[float, float] = (0.0, 0.0)  # per-episode offset, decorrelates envs

    def __post_init__(self):
        if self.kind not in ("flat", "rough", "low_obstacles"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.rough_amplitude < 0 or self.obstacle_height < 0:
            raise ValueError("terrain amplitudes must be >= 0")

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64) + self.phase[0]
        y = np.asarray(y, dtype=np.float64) + self.phase[1]
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "rough":
            a = np.sin(2 * np.pi * x / 0.8) * np.cos(2 * np.pi * y / 0.7)
            b = 0.5 * np.sin(2 * np.pi * (x + y) / 1.3)
            return self.rough_amplitude * (a + b) / 1.5
        inside = ((x % self.obstacle_spacing) < self.obstacle_width) & ((y % self.obstacle_spacing) < self.obstacle_width)
        return np.where(inside, self.obstacle_height, 0.0)


@dataclass
class Perturbation:
    interval: float = 5.0        # s between pushes
    vel_xy: float = 1.0          # m/s horizontal velocity added per push

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("push interval must be > 0")


@dataclass
class SimState:
    root_pos: np.ndarray
    root_quat: np.ndarray
    root_vel: np.ndarray
    root_ang_vel: np.ndarray
    dof_pos: np.ndarray
    dof_vel: np.ndarray
    dof_acc: np.ndarray
    torque: np.ndarray           # applied motor torque (post-clamp)
    torque_raw: np.ndarray       # pre-clamp PD+RFI torque, for limit indicators
    foot_force: np.ndarray       # (n_feet, 3) world frame
    foot_air_time: np.ndarray    # (n_feet,) s since liftoff, 0 while in contact
    foot_swing_height: np.ndarray  # (n_feet,) running max sole height this swing
    foot_contact: np.ndarray     # (n_feet,) bool
    foot_touchdown: np.ndarray   # (n_feet,) bool, touchdown event this tick
    foot_last_air_time: np.ndarray    # latched at touchdown
    foot_last_swing_height: np.ndarray
    projected_gravity: np.ndarray  # gravity direction in root frame, unit
    push_vel: np.ndarray         # velocity added by a push this tick (zero otherwise)
    effective_target: np.ndarray  # PD target actually applied this tick (after delay)
    rfi: np.ndarray              # torque noise injected this tick
    step_count: int
    time: float
    fault: bool
    body_pose: BodyPose          # FK snapshot at tick end
    contact_anchor: list = field(default_factory=list)  # per-foot (K,2) xy stick anchors, NaN when airborne

    def copy(self) -> "SimState":
        return replace(
            self,
            root_pos=self.root_pos.copy(), root_quat=self.root_quat.copy(),
            root_vel=self.root_vel.copy(), root_ang_vel=self.root_ang_vel.copy(),
            dof_pos=self.dof_pos.copy(), dof_vel=self.dof_vel.copy(),
            dof_acc=self.dof_acc.copy(), torque=self.torque.copy(),
            torque_raw=self.torque_raw.copy(), foot_force=self.foot_force.copy(),
            foot_air_time=self.foot_air_time.copy(), foot_swing_height=self.foot_swing_height.copy(),
            foot_contact=self.foot_contact.copy(), foot_touchdown=self.foot_touchdown.copy(),
            foot_last_air_time=self.foot_last_air_time.copy(),
            foot_last_swing_height=self.foot_last_swing_height.copy(),
            projected_gravity=self.projected_gravity.copy(), push_vel=self.push_vel.copy(),
            effective_target=self.effective_target.copy(), rfi=self.rfi.copy(),
            contact_anchor=[a.copy() for a in self.contact_anchor],
        )


def pd_torque(kp: np.ndarray, kd: np.ndarray, target: np.ndarray, dof_pos: np.ndarray, dof_vel: np.ndarray) -> np.ndarray:
    """Raw PD torque, before RFI noise and clamping."""
    return kp * (np.asarray(target, dtype=np.float64) - dof_pos) - kd * dof_vel


@dataclass
class TerminationConfig:
    root_height_min: float = 0.5
    tilt_max: float = np.pi / 3
    deviation_max: float = 0.5
    time_limit: float = 20.0


def terminate(state: SimState, deviation: float, cfg: TerminationConfig, terrain: TerrainSpec | None = None) -> tuple[bool, str]:
    """Episode end test. deviation = mean body distance from reference, m."""
    if state.fault:
        return True, "fault"
    ground = float(terrain.height(state.root_pos[0], state.root_pos[1])) if terrain is not None else 0.0
    if state.root_pos[2] - ground < cfg.root_height_min:
        return True, "fall"
    # tilt = angle between body up-axis and world up; projected gravity z is -cos(tilt)
    tilt = np.arccos(np.clip(-state.projected_gravity[2], -1.0, 1.0))
    if tilt > cfg.tilt_max:
        return True, "tilt"
    if deviation > cfg.deviation_max:
        return True, "deviation"
    if state.time >= cfg.time_limit:
        return True, "timeout"
    return False, ""


class Simulator:
    """Owns randomization-adjusted dynamics constants and the stepping loop.

    One instance per environment; not thread-safe across environments sharing
    an instance. RFI noise and push directions come from the instance RNG, so
    identical seeds give bit-identical trajectories.
    """

    def __init__(
        self,
        model: HumanoidModel,
        params: SimParams | None = None,
        terrain: TerrainSpec | None = None,
        seed: int = 0,
        perturbation: Perturbation | None = None,
        delay_ticks: int = 0,
        rfi_scale: float = 0.0,
        kp_scale: np.ndarray | None = None,
        kd_scale: np.ndarray | None = None,
        mass_scale: np.ndarray | None = None,
        base_com_offset: np.ndarray | None = None,
    ):
        self.model = model
        self.params = params or SimParams()
        self.terrain = terrain or TerrainSpec()
        self.rng = np.random.default_rng(seed)
        self.perturbation = perturbation
        self.rfi_scale = float(rfi_scale)
        if self.params.fixed_base and model.feet:
            raise ValueError("fixed-base models cannot have contact feet")

        self.kp = model.kp * (kp_scale if kp_scale is not None else 1.0)
        self.kd = model.kd * (kd_scale if kd_scale is not None else 1.0)
        self.body_mass = model.body_mass * (mass_scale if mass_scale is not None else 1.0)
        self.body_com = model.body_com.copy()
        if base_com_offset is not None:
            self.body_com[0] = self.body_com[0] + np.asarray(base_com_offset, dtype=np.float64)
        self.total_mass = float(self.body_mass.sum())

        self.delay_ticks = int(delay_ticks)
        self._delay_queue: deque[np.ndarray] = deque(
            [model.default_pose.copy() for _ in range(self.delay_ticks)]
        )
        self._next_push_time = perturbation.interval if perturbation else np.inf

        self._subtree = self._subtree_masks()
        self._joint_inertia = self._effective_joint_inertia()
        self._root_inertia = self._approx_root_inertia()
        self._dof_vel_cap = self.params.max_dof_vel_factor * model.vel_limit
        self._joint_child = np.array([j.child_body for j in model.joints], dtype=np.int64)
        self._joint_parent = model.body_parent[self._joint_child]
        self._masked_mass = self._subtree * self.body_mass[None, :]   # (J, B)
        self._subtree_mass = self._masked_mass.sum(axis=1)            # (J,)

    # ---- precomputed structure ----

    def _subtree_masks(self) -> np.ndarray:
        m = self.model
        mask = np.zeros((m.dof_count, m.body_count), dtype=bool)
        for b in range(m.body_count):
            i = b
            while i != -1:
                j = m.body_joint[i]
                if j >= 0:
                    mask[j, b] = True
                i = m.body_parent[i]
        return mask

    def _zero_config_pose(self) -> BodyPose:
        return forward_kinematics(self.model, np.zeros(3), geom.quat_identity(), self.model.default_pose)

    def _effective_joint_inertia(self) -> np.ndarray:
        """Inertia each joint sees about its axis at the default pose."""
        m = self.model
        pose = self._zero_config_pose()
        coms = pose.pos + np.stack([geom.quat_rotate(pose.quat[b], self.body_com[b]) for b in range(m.body_count)])
        inertia = np.zeros(m.dof_count)
        for j in range(m.dof_count):
            child = m.joints[j].child_body
            r_j = pose.pos[child]
            axis = geom.quat_rotate(pose.quat[m.body_parent[child]], m.joint_axis[j])
            for b in np.flatnonzero(self._subtree[j]):
                d = coms[b] - r_j
                d_perp = d - np.dot(d, axis) * axis
                inertia[j] += self.body_mass[b] * float(np.dot(d_perp, d_perp))
                inertia[j] += float(np.mean(m.body_inertia[b]))  # orientation-agnostic diagonal approx
        return np.maximum(inertia, self.params.min_joint_inertia)

    def _approx_root_inertia(self) -> np.ndarray:
        """Whole-body diagonal inertia about the CoM at default pose, root axes."""
        pose = self._zero_config_pose()
        coms = pose.pos + np.stack([geom.quat_rotate(pose.quat[b], self.body_com[b]) for b in range(self.model.body_count)])
        com = (self.body_mass[:, None] * coms).sum(0) / self.total_mass
        out = np.zeros(3)
        for b in range(self.model.body_count):
            d = coms[b] - com
            d2 = float(np.dot(d, d))
            out += self.body_inertia_world(b) + self.body_mass[b] * (d2 - d * d)
        return np.maximum(out, 1e-3)

    def body_inertia_world(self, b: int) -> np.ndarray:
        return self.model.body_inertia[b]  # diagonal approx, frame differences ignored

    # ---- state construction ----

    def make_state(
        self,
        root_pos: np.ndarray,
        root_quat: np.ndarray,
        dof_pos: np.ndarray,
        dof_vel: np.ndarray | None = None,
        root_vel: np.ndarray | None = None,
        root_ang_vel: np.ndarray | None = None,
    ) -> SimState:
        m = self.model
        dof_vel = np.zeros(m.dof_count) if dof_vel is None else np.asarray(dof_vel, dtype=np.float64).copy()
        root_vel = np.zeros(3) if root_vel is None else np.asarray(root_vel, dtype=np.float64).copy()
        root_ang_vel = np.zeros(3) if root_ang_vel is None else np.asarray(root_ang_vel, dtype=np.float64).copy()
        root_quat = geom.quat_normalize(root_quat)
        pose = forward_kinematics(m, root_pos, root_quat, dof_pos, dof_vel, root_vel, root_ang_vel)
        n_feet = len(m.feet)
        anchors0 = [np.full((len(f.points), 2), np.nan) for f in m.feet]
        forces, _, _, anchors = self._contact_forces(pose, anchors0)
        contact = np.linalg.norm(forces, axis=-1) >= self.params.contact_force_threshold if n_feet else np.zeros(0, dtype=bool)
        state = SimState(
            root_pos=np.asarray(root_pos, dtype=np.float64).copy(),
            root_quat=root_quat.copy(),
            root_vel=root_vel,
            root_ang_vel=root_ang_vel,
            dof_pos=np.asarray(dof_pos, dtype=np.float64).copy(),
            dof_vel=dof_vel,
            dof_acc=np.zeros(m.dof_count),
            torque=np.zeros(m.dof_count),
            torque_raw=np.zeros(m.dof_count),
            foot_force=forces,
            foot_air_time=np.zeros(n_feet),
            foot_swing_height=np.zeros(n_feet),
            foot_contact=contact,
            foot_touchdown=np.zeros(n_feet, dtype=bool),
            foot_last_air_time=np.zeros(n_feet),
            foot_last_swing_height=np.zeros(n_feet),
            projected_gravity=geom.quat_rotate_inv(root_quat, np.array([0.0, 0.0, -1.0])),
            push_vel=np.zeros(3),
            effective_target=np.asarray(dof_pos, dtype=np.float64).copy(),
            rfi=np.zeros(m.dof_count),
            step_count=0,
            time=0.0,
            fault=False,
            body_pose=pose,
            contact_anchor=anchors,
        )
        return state

    def reset_stream(self):
        """Clear per-episode actuators (delay queue, push schedule)."""
        self._delay_queue = deque([self.model.default_pose.copy() for _ in range(self.delay_ticks)])
        self._next_push_time = self.perturbation.interval if self.perturbation else np.inf

    # ---- dynamics ----

    def _contact_forces(self, pose: BodyPose, anchors: list[np.ndarray]):
        """Per-foot total force with stick-slip friction.

        Tangential force is a spring to a per-point anchor set at touchdown;
        when the Coulomb cone clamps it, the anchor slides so the spring
        stays at the clamp (standard penalty stick-slip). Returns updated
        anchors; NaN anchor means the point is airborne.
        """
        m = self.model
        p = self.params
        n_feet = len(m.feet)
        forces = np.zeros((n_feet, 3))
        sole_height = np.full(n_feet, np.inf)
        torque_about = []
        new_anchors = []
        for fi, foot in enumerate(m.feet):
            b = foot.body
            r = pose.pos[b] + geom.quat_rotate(pose.quat[b], foot.points)          # (K,3)
            u = pose.lin_vel[b] + geom.cross3(pose.ang_vel[b], r - pose.pos[b])    # (K,3)
            ground = self.terrain.height(r[:, 0], r[:, 1])
            depth = ground - r[:, 2]
            sole_height[fi] = float(np.min(r[:, 2] - ground))
            touching = depth > 0
            normal = np.where(touching, np.maximum(p.contact_kn * depth - p.contact_cn * u[:, 2], 0.0), 0.0)

            anchor = anchors[fi].copy() if anchors else np.full((len(foot.points), 2), np.nan)
            fresh = touching & np.isnan(anchor[:, 0])
            anchor[fresh] = r[fresh, :2]
            anchor[~touching] = np.nan
            stretch = np.where(touching[:, None], r[:, :2] - np.where(np.isnan(anchor), r[:, :2], anchor), 0.0)
            tangential = -p.contact_kt * stretch - np.where(touching[:, None], p.contact_ct * u[:, :2], 0.0)
            t_mag = np.linalg.norm(tangential, axis=-1)
            cap = self.terrain.friction * normal
            over = t_mag > cap
            scale = np.where(over, cap / np.maximum(t_mag, 1e-12), 1.0)
            tangential = tangential * scale[:, None]
            # sliding: relocate anchor so the spring alone carries the clamped force
            slid = over & touching
            anchor[slid] = r[slid, :2] + tangential[slid] / p.contact_kt
            f = np.concatenate([tangential, normal[:, None]], axis=-1)
            forces[fi] = f.sum(0)
            torque_about.append((r, f))
            new_anchors.append(anchor)
        return forces, sole_height, torque_about, new_anchors

    def _gravity_joint_torques(self, pose: BodyPose, coms: np.ndarray) -> np.ndarray:
        """tau_g[j] = sum_b m_b * g . (axis_j x (com_b - r_j)) over the subtree.

        Only the z-component of the cross product survives, so it reduces to
        two masked matvecs over precomputed subtree masses.
        """
        m = self.model
        axis_w = geom.quat_rotate(pose.quat[self._joint_parent], m.joint_axis)  # (J, 3)
        r_j = pose.pos[self._joint_child]                                       # (J, 3)
        sx = self._masked_mass @ coms[:, 0]
        sy = self._masked_mass @ coms[:, 1]
        cross_z = axis_w[:, 0] * (sy - r_j[:, 1] * self._subtree_mass) - axis_w[:, 1] * (sx - r_j[:, 0] * self._subtree_mass)
        return -self.params.gravity * cross_z

    def _limit_torque(self, d: np.ndarray) -> np.ndarray:
        m = self.model
        over = np.maximum(d - m.joint_limit_hi, 0.0)
        under = np.maximum(m.joint_limit_lo - d, 0.0)
        return self.params.joint_limit_k * (under - over)

    def step(self, state: SimState, action: np.ndarray) -> SimState:
        """Advance one control tick (params.control_dt)."""
        p = self.params
        m = self.model
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (m.dof_count,):
            raise ValueError(f"action shape {action.shape}, expected ({m.dof_count},)")

        effective = self._pop_delayed(action)

        new = state.copy()
        new.push_vel = np.zeros(3)
        if self.perturbation and state.time + 1e-9 >= self._next_push_time and not p.fixed_base:
            angle = self.rng.uniform(0.0, 2 * np.pi)
            dv = self.perturbation.vel_xy * np.array([np.cos(angle), np.sin(angle), 0.0])
            new.root_vel = new.root_vel + dv
            new.push_vel = dv
            self._next_push_time += self.perturbation.interval

        rfi = np.zeros(m.dof_count)
        if self.rfi_scale > 0:
            rfi = self.rng.uniform(-1.0, 1.0, m.dof_count) * self.rfi_scale * m.torque_limit

        dt = p.control_dt / p.substeps
        vel_before = state.dof_vel.copy()
        pose = state.body_pose
        tau_raw = np.zeros(m.dof_count)
        tau = np.zeros(m.dof_count)
        sole_height = None

        for _ in range(p.substeps):
            coms = pose.pos + geom.quat_rotate(pose.quat, self.body_com)
            tau_raw = pd_torque(self.kp, self.kd, effective, new.dof_pos, new.dof_vel) + rfi
            tau = np.clip(tau_raw, -m.torque_limit, m.torque_limit)
            tau_g = self._gravity_joint_torques(pose, coms)
            tau_lim = self._limit_torque(new.dof_pos)
            acc = (tau + tau_g + tau_lim - p.joint_damping * new.dof_vel) / self._joint_inertia
            new.dof_vel = np.clip(new.dof_vel + acc * dt, -self._dof_vel_cap, self._dof_vel_cap)
            new.dof_pos = new.dof_pos + new.dof_vel * dt

            if not p.fixed_base:
                forces, sole_height, point_data, new.contact_anchor = self._contact_forces(pose, new.contact_anchor)
                total_f = forces.sum(0) if len(forces) else np.zeros(3)
                com = (self.body_mass[:, None] * coms).sum(0) / self.total_mass
                torque_w = np.zeros(3)
                for r, f in point_data:
                    torque_w += geom.cross3(r - com, f).sum(0)
                new.root_vel = new.root_vel + (np.array([0.0, 0.0, -p.gravity]) + total_f / self.total_mass) * dt
                R = geom.quat_to_mat(new.root_quat)
                torque_body = R.T @ (torque_w - p.angular_damping * new.root_ang_vel)
                new.root_ang_vel = new.root_ang_vel + R @ (torque_body / self._root_inertia) * dt
                new.root_pos = new.root_pos + new.root_vel * dt
                new.root_quat = geom.quat_integrate(new.root_quat, new.root_ang_vel, dt)
                new.foot_force = forces

            pose = forward_kinematics(m, new.root_pos, new.root_quat, new.dof_pos, new.dof_vel, new.root_vel, new.root_ang_vel)

        if p.fixed_base:
            sole_height = np.zeros(0)
            new.foot_force = np.zeros((0, 3))

        new.torque_raw = tau_raw
        new.torque = tau
        new.effective_target = effective.copy()
        new.rfi = rfi
        new.dof_acc = (new.dof_vel - vel_before) / p.control_dt
        new.body_pose = pose
        new.projected_gravity = geom.quat_rotate_inv(new.root_quat, np.array([0.0, 0.0, -1.0]))

        # foot phase bookkeeping at control-tick granularity
        n_feet = len(m.feet)
        if n_feet:
            in_contact = np.linalg.norm(new.foot_force, axis=-1) >= p.contact_force_threshold
            touchdown = in_contact & ~state.foot_contact
            new.foot_touchdown = touchdown
            for fi in range(n_feet):
                if in_contact[fi]:
                    if touchdown[fi]:
                        new.foot_last_air_time[fi] = state.foot_air_time[fi]
                        new.foot_last_swing_height[fi] = state.foot_swing_height[fi]
                    new.foot_air_time[fi] = 0.0
                    new.foot_swing_height[fi] = 0.0
                else:
                    new.foot_air_time[fi] = state.foot_air_time[fi] + p.control_dt
                    new.foot_swing_height[fi] = max(state.foot_swing_height[fi], float(sole_height[fi]))
            new.foot_contact = in_contact

        new.step_count = state.step_count + 1
        new.time = state.time + p.control_dt
        finite = (
            np.isfinite(new.root_pos).all() and np.isfinite(new.root_vel).all()
            and np.isfinite(new.dof_pos).all() and np.isfinite(new.dof_vel).all()
            and np.isfinite(new.root_quat).all()
        )
        if not finite:
            new.fault = True
        return new

    def _pop_delayed(self, action: np.ndarray) -> np.ndarray:
        if self.delay_ticks <= 0:
            return action
        self._delay_queue.append(action.copy())
        return self._delay_queue.popleft()
