"""Domain randomization: per-episode dynamics draws and their application.

One EpisodeRandomization holds every concrete value an episode runs with, so
rollouts are reproducible from (ranges, seed) and loggable as plain dicts.
Reference offsets are in meters (the vertical range is an order of magnitude
wider than the horizontal one on purpose).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .model import HumanoidModel
from .motion import MotionGoalFrame
from .sim import Perturbation, SimParams, Simulator, TerrainSpec

TERRAINS = ("flat", "rough", "low_obstacles")


@dataclass
class RandomizationRanges:
    friction: tuple[float, float] = (0.2, 1.1)
    base_com_offset: tuple[float, float] = (-0.1, 0.1)      # m, each axis
    link_mass_scale: tuple[float, float] = (0.7, 1.3)       # x default
    kp_scale: tuple[float, float] = (0.75, 1.25)            # x default
    kd_scale: tuple[float, float] = (0.75, 1.25)            # x default
    rfi_scale: float = 0.1                                  # x torque limit
    control_delay_ms: tuple[float, float] = (20.0, 60.0)
    ref_offset_xy: tuple[float, float] = (-0.02, 0.02)      # m
    ref_offset_z: tuple[float, float] = (-0.1, 0.1)         # m
    push_interval: float = 5.0                              # s
    push_vel_xy: float = 1.0                                # m/s
    terrains: tuple[str, ...] = TERRAINS
    push_enabled: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
                if not v[0] <= v[1]:
                    raise ValueError(f"{f.name}: lo must be <= hi, got {v}")
        for t in self.terrains:
            if t not in TERRAINS:
                raise ValueError(f"unknown terrain {t!r}")
        if self.rfi_scale < 0 or self.push_interval <= 0:
            raise ValueError("rfi_scale must be >= 0 and push_interval > 0")

    @classmethod
    def none(cls) -> "RandomizationRanges":
        """Identity: collapsed ranges that reproduce the unrandomized sim."""
        return cls(
            friction=(0.8, 0.8),
            base_com_offset=(0.0, 0.0),
            link_mass_scale=(1.0, 1.0),
            kp_scale=(1.0, 1.0),
            kd_scale=(1.0, 1.0),
            rfi_scale=0.0,
            control_delay_ms=(0.0, 0.0),
            ref_offset_xy=(0.0, 0.0),
            ref_offset_z=(0.0, 0.0),
            terrains=("flat",),
            push_enabled=False,
        )


@dataclass
class EpisodeRandomization:
    friction: float
    base_com_offset: np.ndarray          # (3,)
    link_mass_scale: float
    kp_scale: float
    kd_scale: float
    rfi_scale: float
    delay_ms: float
    delay_ticks: int
    ref_offset: np.ndarray               # (3,)
    terrain: str
    terrain_phase: tuple[float, float]
    push_interval: float
    push_vel_xy: float
    push_enabled: bool
    seed: int

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def sample_episode(
    ranges: RandomizationRanges,
    rng: np.random.Generator,
    control_dt: float = 0.02,
) -> EpisodeRandomization:
    """Independent uniform draws per table row; delay rounds to control ticks."""
    r = ranges
    friction = float(rng.uniform(*r.friction))
    com = rng.uniform(r.base_com_offset[0], r.base_com_offset[1], 3)
    mass = float(rng.uniform(*r.link_mass_scale))
    kp = float(rng.uniform(*r.kp_scale))
    kd = float(rng.uniform(*r.kd_scale))
    delay_ms = float(rng.uniform(*r.control_delay_ms))
    offset = np.array([
        rng.uniform(*r.ref_offset_xy),
        rng.uniform(*r.ref_offset_xy),
        rng.uniform(*r.ref_offset_z),
    ])
    terrain = r.terrains[int(rng.integers(len(r.terrains)))]
    phase = (float(rng.uniform(0.0, 10.0)), float(rng.uniform(0.0, 10.0)))
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return EpisodeRandomization(
        friction=friction,
        base_com_offset=com,
        link_mass_scale=mass,
        kp_scale=kp,
        kd_scale=kd,
        rfi_scale=r.rfi_scale,
        delay_ms=delay_ms,
        delay_ticks=int(round(delay_ms / (control_dt * 1000.0))),
        ref_offset=offset,
        terrain=terrain,
        terrain_phase=phase,
        push_interval=r.push_interval,
        push_vel_xy=r.push_vel_xy,
        push_enabled=r.push_enabled,
        seed=seed,
    )


def make_sim(
    model: HumanoidModel,
    rand: EpisodeRandomization,
    params: SimParams | None = None,
) -> Simulator:
    """Simulator configured with one episode's sampled dynamics."""
    terrain = TerrainSpec(kind=rand.terrain, friction=rand.friction, phase=rand.terrain_phase)
    push = Perturbation(rand.push_interval, rand.push_vel_xy) if rand.push_enabled else None
    return Simulator(
        model,
        params=params,
        terrain=terrain,
        seed=rand.seed,
        perturbation=push,
        delay_ticks=rand.delay_ticks,
        rfi_scale=rand.rfi_scale,
        kp_scale=rand.kp_scale,
        kd_scale=rand.kd_scale,
        mass_scale=rand.link_mass_scale,
        base_com_offset=rand.base_com_offset,
    )


def offset_reference(rand: EpisodeRandomization, frame: MotionGoalFrame) -> MotionGoalFrame:
    """Shift every reference position by the episode's constant offset."""
    return MotionGoalFrame(
        body_pos=frame.body_pos + rand.ref_offset,
        body_quat=frame.body_quat,
        body_lin_vel=frame.body_lin_vel,
        body_ang_vel=frame.body_ang_vel,
        dof_pos=frame.dof_pos,
        dof_vel=frame.dof_vel,
    )
