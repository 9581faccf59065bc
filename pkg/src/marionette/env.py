"""Reference-tracking episode loop shared by training, evaluation, and demos.

A TrackingEnv owns one simulator instance plus the goal cursor into a motion
clip. Episodes start at a sampled (clip, frame) with the state initialized
from the reference (position, orientation, and velocities), and end on
termination, the 20 s time limit, or the end of the clip. Time-limit and
clip-end exits are truncations: no termination penalty, and the final
observation is surfaced for value bootstrapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .model import HumanoidModel
from .motion import MotionClip, sample_training_clip
from .obs import HistoryBuffer, build_privileged_obs, build_variant_obs, obs_schema, record_width, step_record
from .randomize import EpisodeRandomization, RandomizationRanges, make_sim, offset_reference, sample_episode
from .reward import CurriculumState, RewardWeights, compute_reward
from .sim import SimParams, TerminationConfig, terminate

TRUNCATION_REASONS = ("timeout", "clip-end")


@dataclass
class EnvConfig:
    variant: str = "privileged"
    history_steps: int = 25
    action_scale: float = 0.25      # PD target = default pose + scale * action, rad
    min_horizon_frames: int = 50    # shortest clip window left after a sampled start
    clip_mix: tuple[float, float, float] = (0.5, 0.25, 0.25)
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    termination: TerminationConfig | None = None   # None: derived from the model
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges.none)
    sim_params: SimParams | None = None

    def __post_init__(self):
        if self.action_scale <= 0:
            raise ValueError("action_scale must be > 0")
        if self.history_steps < 0:
            raise ValueError("history_steps must be >= 0")


def _default_termination(model: HumanoidModel, params: SimParams) -> TerminationConfig:
    # height/tilt tests assume a legged floating base; disable them otherwise
    if params.fixed_base or not model.feet:
        return TerminationConfig(root_height_min=-np.inf, tilt_max=np.inf)
    return TerminationConfig()


class TrackingEnv:
    """Single environment: simulator + clip cursor + observation state."""

    def __init__(
        self,
        model: HumanoidModel,
        dataset: list[MotionClip],
        config: EnvConfig | None = None,
        seed: int = 0,
    ):
        if not dataset:
            raise ValueError("empty motion dataset")
        self.model = model
        self.dataset = dataset
        self.cfg = config or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.params = self.cfg.sim_params or SimParams(fixed_base=not model.feet)
        self.termination = self.cfg.termination or _default_termination(model, self.params)
        self.curriculum = CurriculumState()    # trainer-owned, scales penalties
        mh = model.hash()
        for clip in dataset:
            if clip.model_hash and clip.model_hash != mh:
                raise ValueError(f"clip {clip.name!r} was built for a different model")
        self._with_linvel = self.cfg.variant == "w-linvel"
        self._needs_history = self.cfg.variant in ("points3", "points8", "points22", "w-linvel")
        self.sim = None
        self.state = None
        self.clip = None
        self._cursor = 0.0
        self._frames_per_tick = 1.0
        self._rand: EpisodeRandomization | None = None
        self._history: HistoryBuffer | None = None
        self._last_action = np.zeros(model.dof_count)
        self._steps = 0

    # ---- dimensions ----

    @property
    def obs_dim(self) -> int:
        return obs_schema(self.model, self.cfg.variant, self.cfg.history_steps).total

    @property
    def act_dim(self) -> int:
        return self.model.dof_count

    # ---- episode control ----

    def reset(self, clip: MotionClip | None = None, start: int | None = None) -> np.ndarray:
        """Sample randomization + (clip, start), init state on the reference."""
        self._rand = sample_episode(self.cfg.randomization, self.rng, self.params.control_dt)
        self.sim = make_sim(self.model, self._rand, self.params)
        if clip is None:
            self.clip, sampled_start = sample_training_clip(
                self.dataset, self.rng, self.cfg.clip_mix,
                min_horizon_frames=min(self.cfg.min_horizon_frames, min(c.length for c in self.dataset)),
            )
            start = sampled_start if start is None else start
        else:
            self.clip = clip
            start = 0 if start is None else start
        start = int(np.clip(start, 0, self.clip.length - 2))
        self._cursor = float(start)
        self._frames_per_tick = self.clip.fps * self.params.control_dt
        f = self.clip.frame(start)
        self.state = self.sim.make_state(
            root_pos=f.root_pos, root_quat=f.root_quat, dof_pos=f.dof_pos,
            dof_vel=f.dof_vel, root_vel=f.root_vel, root_ang_vel=f.root_ang_vel,
        )
        self._last_action = np.zeros(self.model.dof_count)
        self._steps = 0
        if self._needs_history:
            self._history = HistoryBuffer(self.cfg.history_steps, record_width(self.model, self._with_linvel))
        return self.build_obs()

    def goal_frame(self):
        """Reference frame the next step should reach (episode offset applied)."""
        idx = int(round(min(self._cursor + self._frames_per_tick, self.clip.length - 1)))
        f = self.clip.frame(idx)
        if self._rand is not None:
            f = offset_reference(self._rand, f)
        return f

    def build_obs(self, variant: str | None = None) -> np.ndarray:
        """Observation for the current (state, goal). Student variants other
        than the env's own cannot be built here (no matching history)."""
        variant = variant or self.cfg.variant
        history = self._history if variant == self.cfg.variant else None
        return build_variant_obs(self.model, variant, self.state, self.goal_frame(),
                                 self._last_action, history).data

    def privileged_obs(self) -> np.ndarray:
        """Teacher view of the current state, for distillation relabeling."""
        return build_privileged_obs(self.model, self.state, self.goal_frame(), self._last_action).data

    def deviation(self, frame) -> float:
        """Mean body distance from the reference, m. Termination + Succ rule."""
        return float(np.mean(np.linalg.norm(self.state.body_pose.pos - frame.body_pos, axis=-1)))

    def step(self, action: np.ndarray):
        """Apply one control tick. Returns (obs, reward, done, info)."""
        if self.state is None:
            raise RuntimeError("reset() before step()")
        action = np.asarray(action, dtype=np.float64)
        goal = self.goal_frame()
        target = self.model.default_pose + self.cfg.action_scale * action
        new_state = self.sim.step(self.state, target)
        self._cursor = min(self._cursor + self._frames_per_tick, float(self.clip.length - 1))
        self.state = new_state
        self._steps += 1

        dev = self.deviation(goal)
        done, reason = terminate(new_state, dev, self.termination, self.sim.terrain)
        clip_end = self._cursor >= self.clip.length - 1
        if clip_end and not done:
            done, reason = True, "clip-end"
        truncated = done and reason in TRUNCATION_REASONS
        terminated = done and not truncated

        total, terms = compute_reward(
            self.model, new_state, action, self._last_action, goal,
            weights=self.cfg.reward_weights, curriculum=self.curriculum,
            terminated=terminated,
        )
        if self._needs_history:
            self._history.push(step_record(new_state, action, self._with_linvel))
        self._last_action = action

        info = {
            "terms": terms,
            "deviation": dev,
            "reason": reason,
            "truncated": truncated,
            "episode_len": self._steps,
        }
        obs = self.build_obs()
        if done:
            info["terminal_obs"] = obs
        return obs, total, done, info


class VecEnv:
    """Fixed set of independently-seeded TrackingEnvs stepped in lockstep.

    Auto-resets members on episode end; the pre-reset observation is passed
    through info["terminal_obs"] so learners can bootstrap truncations.
    """

    def __init__(self, envs: list[TrackingEnv]):
        if not envs:
            raise ValueError("need at least one env")
        dims = {e.obs_dim for e in envs}
        if len(dims) != 1:
            raise ValueError("mixed observation widths")
        self.envs = envs

    @classmethod
    def make(cls, model, dataset, config=None, n_envs: int = 4, seed: int = 0) -> "VecEnv":
        return cls([TrackingEnv(model, dataset, config, seed=seed + 1000 * i) for i in range(n_envs)])

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def obs_dim(self) -> int:
        return self.envs[0].obs_dim

    @property
    def act_dim(self) -> int:
        return self.envs[0].act_dim

    def set_curriculum(self, c: CurriculumState) -> None:
        for e in self.envs:
            e.curriculum = c

    def reset_all(self) -> np.ndarray:
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions: np.ndarray):
        obs, rewards, dones, infos = [], [], [], []
        for e, a in zip(self.envs, actions):
            o, r, d, i = e.step(a)
            if d:
                o = e.reset()
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(i)
        return np.stack(obs), np.array(rewards), np.array(dones, dtype=bool), infos
