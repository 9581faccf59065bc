"""PPO teacher training, DAgger distillation, and velocity-estimator regression.

All gradients are computed manually through the nets in `net`; one Adam step
per minibatch over a single flat parameter vector (policy mean MLP, log-std
head, and value MLP concatenated) so the 0.2 global-norm clip applies to the
joint gradient.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .env import VecEnv
from .net import Adam, GaussianPolicy, Mlp, save_mlp, save_policy
from .obs import HistoryBuffer, obs_schema, record_width, step_record
from .reward import CurriculumState, curriculum_update


# ---- configs ----


@dataclass
class PpoConfig:
    batch_size: int = 64
    gamma: float = 0.99
    lr: float = 1e-3
    clip: float = 0.2
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 0.2
    epochs: int = 5
    gae_lambda: float = 0.95
    n_envs: int = 4
    horizon: int = 64          # rollout steps per env per iteration
    iterations: int = 200
    hidden: tuple[int, ...] = (512, 256, 128)
    init_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.clip <= 0.0:
            raise ValueError("clip must be > 0")
        if self.batch_size < 1 or self.horizon < 1:
            raise ValueError("batch_size and horizon must be >= 1")


@dataclass
class DistillConfig:
    history_steps: int = 25
    variant: str = "points3"
    init_std: float = 0.001
    iterations: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    horizon: int = 64
    epochs: int = 5
    max_grad_norm: float = 0.2
    hidden: tuple[int, ...] = (512, 256, 128)
    seed: int = 0

    def __post_init__(self):
        if self.history_steps < 0:
            raise ValueError("history_steps must be >= 0")


@dataclass
class VelEstConfig:
    history_steps: int = 25
    hidden: tuple[int, ...] = (128, 64)
    iterations: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    holdout: float = 0.2
    seed: int = 0


@dataclass
class RolloutBatch:
    observations: np.ndarray   # (T, N, D)
    actions: np.ndarray        # (T, N, J)
    log_probs: np.ndarray      # (T, N)
    rewards: np.ndarray        # (T, N), truncation bootstrap folded in
    dones: np.ndarray          # (T, N) bool
    values: np.ndarray         # (T+1, N), trailing bootstrap row
    advantages: np.ndarray     # (T, N)
    returns: np.ndarray        # (T, N)
    episode_lengths: list[int]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, stats: dict):
        super().__init__(message)
        self.stats = stats


# ---- advantage estimation ----


def gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimation with episode-boundary resets.

    values has one more row than rewards: values[t] = V(s_t), with the last
    entry the bootstrap for the state after the final transition. Works on
    (T,) vectors or (T, N) batches.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    if values.shape[0] != rewards.shape[0] + 1 or dones.shape != rewards.shape:
        raise ValueError("gae: misaligned inputs")
    not_done = 1.0 - dones.astype(np.float64)
    deltas = rewards + gamma * values[1:] * not_done - values[:-1]
    adv = np.zeros_like(rewards)
    acc = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.float64(0.0))
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = deltas[t] + gamma * lam * not_done[t] * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def ppo_surrogate(logp_new, logp_old, advantages, clip: float) -> float:
    """Mean clipped surrogate objective (the quantity PPO ascends)."""
    ratio = np.exp(np.asarray(logp_new) - np.asarray(logp_old))
    adv = np.asarray(advantages)
    return float(np.mean(np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)))


# ---- PPO learner ----


class PpoLearner:
    """Single-process learner over a VecEnv; owns policy, value net, optimizer."""

    def __init__(self, vec: VecEnv, cfg: PpoConfig):
        self.vec = vec
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.policy = GaussianPolicy(vec.obs_dim, vec.act_dim, hidden=cfg.hidden,
                                     init_std=cfg.init_std, rng=rng)
        self.value = Mlp([vec.obs_dim, *cfg.hidden, 1], rng=rng)
        # one flat parameter vector so the norm clip covers the joint gradient
        n_p, n_s = self.policy.mlp.n_params, vec.act_dim
        self.theta = np.concatenate([self.policy.mlp.params, self.policy.log_std, self.value.params])
        self.policy.mlp.params = self.theta[:n_p]
        self.policy.log_std = self.theta[n_p:n_p + n_s]
        self.value.params = self.theta[n_p + n_s:]
        self._split = (n_p, n_s)
        self.opt = Adam(self.theta.shape[0], lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)
        self.rng = rng
        self._obs: np.ndarray | None = None
        self._ep_lens: deque[int] = deque(maxlen=100)

    def mean_episode_len(self) -> float:
        return float(np.mean(self._ep_lens)) if self._ep_lens else float(self.cfg.horizon)

    def collect(self) -> tuple[RolloutBatch, dict]:
        cfg, vec, pol = self.cfg, self.vec, self.policy
        T, N = cfg.horizon, len(vec)
        if self._obs is None:
            self._obs = vec.reset_all()
        obs_buf = np.empty((T, N, vec.obs_dim))
        act_buf = np.empty((T, N, vec.act_dim))
        logp_buf = np.empty((T, N))
        rew_buf = np.empty((T, N))
        done_buf = np.zeros((T, N), dtype=bool)
        val_buf = np.empty((T + 1, N))
        term_sums: dict[str, float] = {}
        raw_reward_sum = 0.0
        for t in range(T):
            obs = self._obs
            mean = pol.mean(obs)
            act = mean + pol.std * self.rng.standard_normal(mean.shape)
            logp_buf[t] = pol.log_prob(mean, act)
            val_buf[t] = self.value.forward(obs)[:, 0]
            next_obs, rew, done, infos = vec.step(act)
            raw_reward_sum += float(rew.sum())
            for i, info in enumerate(infos):
                for k, v in info["terms"].items():
                    term_sums[k] = term_sums.get(k, 0.0) + v
                if done[i]:
                    self._ep_lens.append(info["episode_len"])
                    if info["truncated"]:
                        rew[i] += cfg.gamma * float(self.value.forward(info["terminal_obs"])[0])
            obs_buf[t] = obs
            act_buf[t] = act
            rew_buf[t] = rew
            done_buf[t] = done
            self._obs = next_obs
        val_buf[T] = self.value.forward(self._obs)[:, 0]
        adv, ret = gae(rew_buf, val_buf, done_buf, cfg.gamma, cfg.gae_lambda)
        batch = RolloutBatch(obs_buf, act_buf, logp_buf, rew_buf, done_buf, val_buf,
                             adv, ret, list(self._ep_lens))
        stats = {
            "reward_mean": raw_reward_sum / (T * N),
            "terms": {k: v / (T * N) for k, v in sorted(term_sums.items())},
        }
        return batch, stats

    def update(self, batch: RolloutBatch) -> dict:
        cfg = self.cfg
        T, N, D = batch.observations.shape
        M = T * N
        obs_f = batch.observations.reshape(M, D)
        act_f = batch.actions.reshape(M, -1)
        logp_f = batch.log_probs.reshape(M)
        adv_f = batch.advantages.reshape(M)
        ret_f = batch.returns.reshape(M)
        idx = np.arange(M)
        pol, val = self.policy, self.value
        n_p, n_s = self._split
        loss_sums = np.zeros(3)
        n_batches = 0
        for _ in range(cfg.epochs):
            self.rng.shuffle(idx)
            for start in range(0, M, cfg.batch_size):
                b = idx[start:start + cfg.batch_size]
                B = b.shape[0]
                adv_b = adv_f[b]
                adv_b = (adv_b - adv_b.mean()) / (adv_b.std() + 1e-8)
                mean, cache = pol.mlp.forward(obs_f[b], need_cache=True)
                logp_new = pol.log_prob(mean, act_f[b])
                ratio = np.exp(logp_new - logp_f[b])
                unclipped = ratio * adv_b
                clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_b
                pi_loss = -float(np.mean(np.minimum(unclipped, clipped)))
                v_out, vcache = val.forward(obs_f[b], need_cache=True)
                v = v_out[:, 0]
                v_loss = float(np.mean((v - ret_f[b]) ** 2))
                entropy = pol.entropy()
                loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        "training diverged: non-finite loss",
                        {"pi_loss": pi_loss, "value_loss": v_loss, "entropy": entropy,
                         "grad_faults": self.opt.faults, "adam_steps": self.opt.t},
                    )
                coeff = np.where(unclipped <= clipped, -ratio * adv_b, 0.0) / B
                dmean, dlogstd = pol.logp_backward(mean, act_f[b], coeff)
                dlogstd = dlogstd - cfg.entropy_coef
                pgrads, _ = pol.mlp.backward(cache, dmean)
                dv = (2.0 * cfg.value_coef / B) * (v - ret_f[b])
                vgrads, _ = val.backward(vcache, dv[:, None])
                g = np.concatenate([pgrads, dlogstd, vgrads])
                self.opt.step(self.theta, g)
                loss_sums += (pi_loss, v_loss, entropy)
                n_batches += 1
        avg = loss_sums / max(n_batches, 1)
        return {"policy_loss": float(avg[0]), "value_loss": float(avg[1]), "entropy": float(avg[2])}


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: Mlp
    rows: list[dict]
    curriculum: CurriculumState


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _policy_meta(vec: VecEnv, extra: dict | None = None) -> dict:
    env = vec.envs[0]
    meta = {
        "variant": env.cfg.variant,
        "model": env.model.name,
        "model_hash": env.model.hash(),
        "action_scale": env.cfg.action_scale,
        "history_steps": env.cfg.history_steps,
        "obs_dim": vec.obs_dim,
        "act_dim": vec.act_dim,
    }
    meta.update(extra or {})
    return meta


def train_teacher(
    vec: VecEnv,
    cfg: PpoConfig,
    curriculum: CurriculumState | None = None,
    checkpoint_path=None,
    log_path=None,
    learner: PpoLearner | None = None,
) -> TrainResult:
    """Clipped-surrogate PPO over the vec's tracking envs."""
    learner = learner or PpoLearner(vec, cfg)
    curriculum = curriculum or CurriculumState()
    rows: list[dict] = []
    try:
        for it in range(cfg.iterations):
            vec.set_curriculum(curriculum)
            batch, stats = learner.collect()
            losses = learner.update(batch)
            mean_len = learner.mean_episode_len()
            curriculum = curriculum_update(curriculum, mean_len)
            row = {
                "iteration": it,
                "reward_mean": stats["reward_mean"],
                "episode_len": mean_len,
                "s_current": curriculum.s_current,
                "value_coef": cfg.value_coef,
                "entropy_coef": cfg.entropy_coef,
                "grad_faults": learner.opt.faults,
                **losses,
            }
            row.update({f"rew_{k}": v for k, v in stats["terms"].items()})
            rows.append(row)
    except TrainingDiverged as e:
        dump = {"error": str(e), "stats": e.stats, "completed_iterations": len(rows),
                "last_rows": rows[-5:]}
        dump_path = f"{log_path or 'train'}.divergence.json"
        with open(dump_path, "w") as fh:
            json.dump(dump, fh, indent=2)
        raise
    finally:
        if log_path and rows:
            write_csv(log_path, rows)
    if checkpoint_path:
        save_policy(checkpoint_path, learner.policy,
                    _policy_meta(vec, {"s_current": curriculum.s_current, "iterations": cfg.iterations}))
        save_mlp(f"{checkpoint_path}.value", learner.value, {"role": "value"})
    return TrainResult(learner.policy, learner.value, rows, curriculum)


# ---- DAgger distillation ----


@dataclass
class DistillResult:
    student: GaussianPolicy
    rows: list[dict]


def distill_student(
    teacher,
    vec: VecEnv,
    cfg: DistillConfig,
    student: GaussianPolicy | None = None,
    checkpoint_path=None,
    log_path=None,
) -> DistillResult:
    """Roll out the student, relabel every visited state with the teacher's
    mean action on the privileged view, regress the student mean to it (MSE).

    teacher: GaussianPolicy over privileged observations, or any callable
    mapping a (N, D_priv) batch to (N, J) actions.
    """
    priv_dim = obs_schema(vec.envs[0].model, "privileged").total
    if isinstance(teacher, GaussianPolicy):
        if teacher.mlp.n_in != priv_dim:
            raise ValueError(
                f"observation schema mismatch: teacher expects {teacher.mlp.n_in}, "
                f"privileged view is {priv_dim}")
        teacher_fn = teacher.mean
    else:
        teacher_fn = teacher
    rng = np.random.default_rng(cfg.seed)
    if student is None:
        student = GaussianPolicy(vec.obs_dim, vec.act_dim, hidden=cfg.hidden,
                                 init_std=cfg.init_std, rng=rng)
    opt = Adam(student.mlp.n_params, lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)
    obs = vec.reset_all()
    T, N = cfg.horizon, len(vec)
    rows: list[dict] = []
    for it in range(cfg.iterations):
        X = np.empty((T, N, vec.obs_dim))
        Y = np.empty((T, N, vec.act_dim))
        for t in range(T):
            priv = np.stack([e.privileged_obs() for e in vec.envs])
            X[t] = obs
            Y[t] = teacher_fn(priv)
            act = student.mean(obs) + student.std * rng.standard_normal((N, vec.act_dim))
            obs, _, _, _ = vec.step(act)
        Xf = X.reshape(T * N, -1)
        Yf = Y.reshape(T * N, -1)
        mse = float(np.mean(np.sum((student.mean(Xf) - Yf) ** 2, axis=1)))
        idx = np.arange(T * N)
        for _ in range(cfg.epochs):
            rng.shuffle(idx)
            for start in range(0, idx.shape[0], cfg.batch_size):
                b = idx[start:start + cfg.batch_size]
                mean, cache = student.mlp.forward(Xf[b], need_cache=True)
                diff = mean - Yf[b]
                dy = (2.0 / b.shape[0]) * diff
                grads, _ = student.mlp.backward(cache, dy)
                opt.step(student.mlp.params, grads)
        rows.append({"iteration": it, "action_mse": mse})
    if log_path:
        write_csv(log_path, rows)
    if checkpoint_path:
        save_policy(checkpoint_path, student, _policy_meta(vec, {"distilled": True}))
    return DistillResult(student, rows)


# ---- velocity estimator ----


def collect_velocity_dataset(
    vec: VecEnv,
    policy: GaussianPolicy | None,
    steps: int,
    history_steps: int = 25,
    rng: np.random.Generator | None = None,
    explore_std: float = 0.0,
):
    """(history window, root-local linear velocity) pairs from rollouts.

    policy None means zero actions (hold the default pose).
    """
    rng = rng or np.random.default_rng(0)
    model = vec.envs[0].model
    width = record_width(model)
    bufs = [HistoryBuffer(history_steps, width) for _ in vec.envs]
    obs = vec.reset_all()
    X, Y = [], []
    for _ in range(steps):
        if policy is None:
            act = np.zeros((len(vec), vec.act_dim))
        else:
            act = policy.mean(obs)
        if explore_std > 0:
            act = act + explore_std * rng.standard_normal(act.shape)
        obs, _, dones, _ = vec.step(act)
        for i, e in enumerate(vec.envs):
            bufs[i].push(step_record(e.state, act[i]))
            X.append(bufs[i].flat())
            Y.append(geom.quat_rotate_inv(e.state.root_quat, e.state.root_vel))
            if dones[i]:
                bufs[i] = HistoryBuffer(history_steps, width)
    return np.stack(X), np.stack(Y)


def train_velocity_estimator(X: np.ndarray, Y: np.ndarray, cfg: VelEstConfig | None = None):
    """MSE regression of the velocity target from proprio history windows.

    Returns (estimator mlp, report) with held-out MSE and target variance,
    both as elementwise means in (m/s)^2.
    """
    cfg = cfg or VelEstConfig()
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    order = rng.permutation(n)
    n_hold = max(1, int(round(cfg.holdout * n)))
    hold, tr = order[:n_hold], order[n_hold:]
    mlp = Mlp([X.shape[1], *cfg.hidden, Y.shape[1]], rng=rng)
    opt = Adam(mlp.n_params, lr=cfg.lr, max_grad_norm=None)
    for _ in range(cfg.iterations):
        b = tr[rng.integers(0, tr.shape[0], min(cfg.batch_size, tr.shape[0]))]
        pred, cache = mlp.forward(X[b], need_cache=True)
        dy = (2.0 / b.shape[0]) * (pred - Y[b])
        grads, _ = mlp.backward(cache, dy)
        opt.step(mlp.params, grads)
    pred_h = mlp.forward(X[hold])
    mse = float(np.mean((pred_h - Y[hold]) ** 2))
    variance = float(np.mean((Y[hold] - Y[hold].mean(axis=0)) ** 2))
    report = {
        "mse": mse,
        "variance": variance,
        "n_train": int(tr.shape[0]),
        "n_holdout": int(n_hold),
        "holdout_X": X[hold],
        "holdout_Y": Y[hold],
    }
    return mlp, report
