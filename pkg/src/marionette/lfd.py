"""Learning from demonstration on sparse motion goals.

A recorded demo frame pairs a low-dimensional task observation with the sparse
motion goal commanded at that instant (3 keypoint targets, meters, plus any
auxiliary channels), sampled at 30 Hz. Policies imitate the goal stream:
plain behavior cloning regresses the next few goals, the diffusion head
learns the full conditional goal distribution and so survives multimodal
demonstrations where BC collapses to the mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .net import Adam, Mlp, load_checkpoint, save_checkpoint
from .train import write_csv

DEMO_VERSION = 1
DEMO_FPS = 30.0

# denoised-sample estimates are clipped to this many standard deviations; at
# high noise levels the raw x0 estimate is wild and would pull the reverse
# chain off the data manifold
X0_CLIP = 3.0


# ---- demo storage ----


@dataclass
class DemoEpisode:
    """One contiguous recording: obs (T, Do), actions (T, Da), timestamps (T,) s."""

    obs: np.ndarray
    actions: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if not (self.obs.shape[0] == self.actions.shape[0] == self.timestamps.shape[0]):
            raise ValueError("obs, actions and timestamps must have equal length")


@dataclass
class DemoDataset:
    task: str
    fps: float
    episodes: list[DemoEpisode]

    @property
    def n_frames(self) -> int:
        return sum(ep.obs.shape[0] for ep in self.episodes)

    def windows(self, obs_horizon: int, pred_horizon: int):
        """Per-frame training pairs: stacked past obs and the next pred_horizon
        actions. Windows crossing an episode edge repeat the boundary frame.

        Returns (O (N, obs_horizon*Do), A (N, pred_horizon, Da)).
        """
        if obs_horizon < 1 or pred_horizon < 1:
            raise ValueError("horizons must be >= 1")
        os_, as_ = [], []
        for ep in self.episodes:
            t = ep.obs.shape[0]
            if t == 0:
                continue
            idx = np.arange(t)[:, None]
            o_idx = np.clip(idx - np.arange(obs_horizon - 1, -1, -1)[None, :], 0, t - 1)
            a_idx = np.clip(idx + np.arange(pred_horizon)[None, :], 0, t - 1)
            os_.append(ep.obs[o_idx].reshape(t, -1))
            as_.append(ep.actions[a_idx])
        if not os_:
            raise ValueError("dataset has no frames")
        return np.concatenate(os_), np.concatenate(as_)


def save_demos(dataset: DemoDataset, path) -> None:
    """JSON lines: one header, then one line per episode. Floats survive the
    round trip exactly (shortest-repr doubles)."""
    with open(path, "w") as f:
        header = {
            "demo_version": DEMO_VERSION,
            "task": dataset.task,
            "fps": dataset.fps,
            "episodes": len(dataset.episodes),
        }
        f.write(json.dumps(header) + "\n")
        for ep in dataset.episodes:
            f.write(json.dumps({
                "obs": ep.obs.tolist(),
                "actions": ep.actions.tolist(),
                "timestamps": ep.timestamps.tolist(),
            }) + "\n")


def load_demos(path) -> DemoDataset:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty demo file")
    header = json.loads(lines[0])
    version = header.get("demo_version")
    if version != DEMO_VERSION:
        raise ValueError(f"unsupported demo version {version}")
    if len(lines) - 1 != header["episodes"]:
        raise ValueError("episode count does not match header")
    episodes = []
    for ln in lines[1:]:
        d = json.loads(ln)
        episodes.append(DemoEpisode(
            np.asarray(d["obs"], dtype=np.float64).reshape(len(d["obs"]), -1),
            np.asarray(d["actions"], dtype=np.float64).reshape(len(d["actions"]), -1),
            np.asarray(d["timestamps"], dtype=np.float64),
        ))
    return DemoDataset(task=header["task"], fps=header["fps"], episodes=episodes)


# ---- scripted desk task ----


class PointReachTask:
    """Kinematic stand-in for teleoperated goal streams: three keypoints chase
    commanded targets with first-order lag at 30 Hz.

    obs = [keypoints (9,), target (3,)] m; action = commanded keypoint
    positions (9,) m. The scripted expert walks the formation (head above the
    target, hands beside it) in capped steps, which is what a careful human
    demonstrator produces.
    """

    obs_dim = 12
    act_dim = 9
    fps = DEMO_FPS
    name = "point-reach"

    def __init__(self, horizon: int = 120, tol: float = 0.12, lag: float = 0.6,
                 step_max: float = 0.03):
        self.horizon = horizon
        self.tol = tol
        self.lag = lag
        self.step_max = step_max
        self.offsets = np.array([[0.0, 0.0, 0.25], [-0.15, 0.0, 0.0], [0.15, 0.0, 0.0]])
        self.keypoints = np.zeros((3, 3))
        self.target = np.zeros(3)
        self.t = 0
        self.fault = False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.keypoints = rng.uniform(-0.5, 0.5, (3, 3))
        self.target = rng.uniform(-0.5, 0.5, 3)
        self.t = 0
        self.fault = False
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.concatenate([self.keypoints.reshape(-1), self.target])

    def desired(self) -> np.ndarray:
        return self.target[None, :] + self.offsets

    def scripted_action(self) -> np.ndarray:
        gap = self.desired() - self.keypoints
        dist = np.linalg.norm(gap, axis=1, keepdims=True)
        scale = np.minimum(1.0, self.step_max / np.maximum(dist, 1e-9))
        return (self.keypoints + gap * scale).reshape(-1)

    def step(self, action: np.ndarray):
        """Returns (obs, done, success)."""
        commanded = np.asarray(action, dtype=np.float64).reshape(3, 3)
        self.keypoints = self.keypoints + self.lag * (commanded - self.keypoints)
        self.t += 1
        err = float(np.linalg.norm(self.keypoints - self.desired(), axis=1).mean())
        success = err < self.tol
        done = success or self.t >= self.horizon
        return self.obs(), done, success


def record_demo(task, episodes: int | None = None, minutes: float | None = None,
                rng: np.random.Generator | None = None) -> DemoDataset:
    """Runs the task's scripted expert and records (obs, action) at the task
    rate. A fault mid-episode aborts that episode and discards the partial
    recording; recording then continues with a fresh episode. With `minutes`
    set, episodes accumulate until the recorded frames cover that duration.
    """
    if (episodes is None) == (minutes is None):
        raise ValueError("pass exactly one of episodes or minutes")
    rng = rng or np.random.default_rng(0)
    target_frames = None if minutes is None else int(round(minutes * 60.0 * task.fps))
    out: list[DemoEpisode] = []
    frames = 0
    ep_i = 0
    while True:
        if target_frames is None:
            if ep_i >= episodes:
                break
        elif frames >= target_frames:
            break
        ep_i += 1
        obs = task.reset(rng)
        obs_rows, act_rows = [], []
        done = False
        while not done:
            action = task.scripted_action()
            obs_rows.append(obs)
            act_rows.append(action)
            obs, done, _ = task.step(action)
            if task.fault:
                break
        if task.fault:
            continue
        ts = np.arange(len(obs_rows)) / task.fps
        out.append(DemoEpisode(np.stack(obs_rows), np.stack(act_rows), ts))
        frames += len(obs_rows)
    return DemoDataset(task=task.name, fps=task.fps, episodes=out)


# ---- normalization ----


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = x.reshape(-1, x.shape[-1])
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-8))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def decode(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def _as_windows(data, obs_horizon: int, pred_horizon: int):
    """Accepts a DemoDataset or a prebuilt (O, A) pair; A may carry a longer
    horizon than needed and is truncated."""
    if isinstance(data, DemoDataset):
        O, A = data.windows(obs_horizon, pred_horizon)
    else:
        O, A = data
        O = np.asarray(O, dtype=np.float64)
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 3:
            raise ValueError("actions must be (n, horizon, act_dim)")
        if A.shape[1] < pred_horizon:
            raise ValueError(f"action windows shorter than horizon {pred_horizon}")
        A = A[:, :pred_horizon]
    if O.shape[0] != A.shape[0]:
        raise ValueError("observation/action window count mismatch")
    return O, A


# ---- noise schedule ----


def cosine_alpha_bar(iterations: int, s: float = 0.008, max_beta: float = 0.999) -> np.ndarray:
    """Cumulative signal fraction for the squared-cosine schedule, indices
    0..iterations. Per-step betas are capped so the tail stays positive."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    steps = np.arange(iterations + 1, dtype=np.float64)
    f = np.cos((steps / iterations + s) / (1.0 + s) * np.pi / 2.0) ** 2
    ab = f / f[0]
    betas = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, max_beta)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of the diffusion step index, (n, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---- configs ----


@dataclass
class BcConfig:
    obs_horizon: int = 1
    action_horizon: int = 8
    hidden: tuple = (256, 256)
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch: int = 32
    train_steps: int = 2000
    holdout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.obs_horizon < 1 or self.action_horizon < 1:
            raise ValueError("horizons must be >= 1")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout must be in [0, 1)")


@dataclass
class DiffusionConfig:
    obs_horizon: int = 1
    action_horizon: int = 8
    pred_horizon: int = 16
    iterations: int = 100
    batch: int = 32
    weight_decay: float = 1e-5
    schedule: str = "cosine"
    sampler: str = "ddpm"
    ddim_steps: int = 10
    hidden: tuple = (256, 256)
    temb_dim: int = 32
    lr: float = 1e-4
    train_steps: int = 3000
    ema_decay: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.obs_horizon < 1:
            raise ValueError("obs_horizon must be >= 1")
        if not 1 <= self.action_horizon <= self.pred_horizon:
            raise ValueError("need 1 <= action_horizon <= pred_horizon")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.schedule != "cosine":
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if not 1 <= self.ddim_steps <= self.iterations:
            raise ValueError("need 1 <= ddim_steps <= iterations")


# ---- behavior cloning ----


class BcPolicy:
    """MSE regressor from the current obs window to the next few goals."""

    def __init__(self, mlp: Mlp, obs_norm: Normalizer, act_norm: Normalizer,
                 action_horizon: int, obs_horizon: int, act_dim: int):
        self.mlp = mlp
        self.obs_norm = obs_norm
        self.act_norm = act_norm
        self.action_horizon = action_horizon
        self.obs_horizon = obs_horizon
        self.act_dim = act_dim

    def predict(self, obs: np.ndarray) -> np.ndarray:
        """obs (obs_horizon*Do,) -> actions (action_horizon, act_dim)."""
        o = np.asarray(obs, dtype=np.float64).reshape(self.obs_horizon, -1)
        x = self.obs_norm.encode(o).reshape(-1)
        y = self.mlp.forward(x).reshape(self.action_horizon, self.act_dim)
        return self.act_norm.decode(y)


def train_bc(data, cfg: BcConfig):
    """Returns (BcPolicy, report) with held-out MSE in raw action units."""
    O, A = _as_windows(data, cfg.obs_horizon, cfg.action_horizon)
    n, act_dim = O.shape[0], A.shape[2]
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_hold = int(n * cfg.holdout)
    hold, tr = perm[:n_hold], perm[n_hold:]
    if tr.size == 0:
        raise ValueError("no training windows left after holdout")
    obs_norm = Normalizer.fit(O[tr].reshape(-1, O.shape[1] // cfg.obs_horizon))
    act_norm = Normalizer.fit(A[tr])
    Xo = obs_norm.encode(O.reshape(n, cfg.obs_horizon, -1)).reshape(n, -1)
    Ya = act_norm.encode(A).reshape(n, -1)
    mlp = Mlp([Xo.shape[1], *cfg.hidden, Ya.shape[1]], rng=np.random.default_rng(cfg.seed + 1))
    opt = Adam(mlp.n_params, lr=cfg.lr, weight_decay=cfg.weight_decay, max_grad_norm=None)
    for _ in range(cfg.train_steps):
        idx = tr[rng.integers(0, tr.size, cfg.batch)]
        pred, cache = mlp.forward(Xo[idx], need_cache=True)
        dy = 2.0 * (pred - Ya[idx]) / pred.size
        grads, _ = mlp.backward(cache, dy)
        opt.step(mlp.params, grads)
    pol = BcPolicy(mlp, obs_norm, act_norm, cfg.action_horizon, cfg.obs_horizon, act_dim)
    eval_idx = hold if hold.size else tr
    pred = act_norm.decode(mlp.forward(Xo[eval_idx]).reshape(-1, cfg.action_horizon, act_dim))
    mse = float(((pred - A[eval_idx]) ** 2).mean())
    return pol, {"mse": mse, "n_train": int(tr.size), "n_holdout": int(hold.size)}


# ---- diffusion policy ----


class DiffusionPolicy:
    """Epsilon-prediction MLP over (noisy goal sequence, step embedding, obs)."""

    def __init__(self, mlp: Mlp, alpha_bar: np.ndarray, cfg: DiffusionConfig,
                 obs_norm: Normalizer, act_norm: Normalizer, act_dim: int):
        self.mlp = mlp
        self.alpha_bar = alpha_bar
        self.cfg = cfg
        self.obs_norm = obs_norm
        self.act_norm = act_norm
        self.act_dim = act_dim

    @property
    def action_horizon(self) -> int:
        return self.cfg.action_horizon

    def _eps(self, x: np.ndarray, t: int, obs_feat: np.ndarray) -> np.ndarray:
        inp = np.concatenate([x, timestep_embedding([t], self.cfg.temb_dim)[0], obs_feat])
        return self.mlp.forward(inp)

    def _encode_obs(self, obs: np.ndarray) -> np.ndarray:
        o = np.asarray(obs, dtype=np.float64).reshape(self.cfg.obs_horizon, -1)
        return self.obs_norm.encode(o).reshape(-1)

    def sample(self, obs: np.ndarray, rng: np.random.Generator,
               sampler: str | None = None, ddim_steps: int | None = None) -> np.ndarray:
        """Draws one goal sequence (pred_horizon, act_dim) in raw units.

        ddpm: full ancestral chain over every schedule step. ddim: eta = 0,
        deterministic given the initial noise, on an evenly strided
        sub-schedule.
        """
        sampler = sampler or self.cfg.sampler
        ab = self.alpha_bar
        T = self.cfg.iterations
        obs_feat = self._encode_obs(obs)
        x = rng.standard_normal(self.cfg.pred_horizon * self.act_dim)
        if sampler == "ddpm":
            for t in range(T, 0, -1):
                eps = self._eps(x, t, obs_feat)
                x0 = np.clip((x - np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(ab[t]), -X0_CLIP, X0_CLIP)
                alpha_t = ab[t] / ab[t - 1]
                beta_t = 1.0 - alpha_t
                mean = (np.sqrt(ab[t - 1]) * beta_t * x0
                        + np.sqrt(alpha_t) * (1.0 - ab[t - 1]) * x) / (1.0 - ab[t])
                if t > 1:
                    var = beta_t * (1.0 - ab[t - 1]) / (1.0 - ab[t])
                    x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
                else:
                    x = mean
        elif sampler == "ddim":
            steps = ddim_steps if ddim_steps is not None else self.cfg.ddim_steps
            taus = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))[::-1]
            for t, t_prev in zip(taus[:-1], taus[1:]):
                eps = self._eps(x, int(t), obs_feat)
                x0 = np.clip((x - np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(ab[t]), -X0_CLIP, X0_CLIP)
                x = np.sqrt(ab[t_prev]) * x0 + np.sqrt(1.0 - ab[t_prev]) * eps
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
        seq = x.reshape(self.cfg.pred_horizon, self.act_dim)
        return self.act_norm.decode(seq)


def train_diffusion(data, cfg: DiffusionConfig, log_every: int = 100):
    """Trains the denoiser with the standard forward-noising MSE:
    x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, loss |eps_hat - eps|^2.

    Returns (DiffusionPolicy, rows of {step, loss}).
    """
    O, A = _as_windows(data, cfg.obs_horizon, cfg.pred_horizon)
    n, _, act_dim = A.shape
    rng = np.random.default_rng(cfg.seed)
    obs_norm = Normalizer.fit(O.reshape(n, cfg.obs_horizon, -1).reshape(-1, O.shape[1] // cfg.obs_horizon))
    act_norm = Normalizer.fit(A)
    Xo = obs_norm.encode(O.reshape(n, cfg.obs_horizon, -1)).reshape(n, -1)
    X0 = act_norm.encode(A).reshape(n, -1)
    ab = cosine_alpha_bar(cfg.iterations)
    d_act = X0.shape[1]
    mlp = Mlp([d_act + cfg.temb_dim + Xo.shape[1], *cfg.hidden, d_act],
              rng=np.random.default_rng(cfg.seed + 1))
    opt = Adam(mlp.n_params, lr=cfg.lr, weight_decay=cfg.weight_decay, max_grad_norm=None)
    ema = mlp.params.copy()
    rows = []
    for step in range(cfg.train_steps):
        # cosine decay to 10% keeps late updates from washing out the fit
        opt.lr = cfg.lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * step / cfg.train_steps)))
        idx = rng.integers(0, n, cfg.batch)
        t = rng.integers(1, cfg.iterations + 1, cfg.batch)
        eps = rng.standard_normal((cfg.batch, d_act))
        xt = np.sqrt(ab[t])[:, None] * X0[idx] + np.sqrt(1.0 - ab[t])[:, None] * eps
        inp = np.concatenate([xt, timestep_embedding(t, cfg.temb_dim), Xo[idx]], axis=1)
        pred, cache = mlp.forward(inp, need_cache=True)
        diff = pred - eps
        if step % log_every == 0 or step == cfg.train_steps - 1:
            rows.append({"step": step, "loss": float((diff ** 2).mean())})
        grads, _ = mlp.backward(cache, 2.0 * diff / diff.size)
        opt.step(mlp.params, grads)
        ema += (1.0 - cfg.ema_decay) * (mlp.params - ema)
    mlp.params[:] = ema   # sample from the averaged weights
    pol = DiffusionPolicy(mlp, ab, cfg, obs_norm, act_norm, act_dim)
    return pol, rows


def sample_actions(policy, obs: np.ndarray, rng: np.random.Generator | None = None,
                   sampler: str | None = None, ddim_steps: int | None = None) -> np.ndarray:
    """Uniform entry point: (horizon, act_dim) goal sequence for either head."""
    if isinstance(policy, BcPolicy):
        return policy.predict(obs)
    if isinstance(policy, DiffusionPolicy):
        return policy.sample(obs, rng or np.random.default_rng(0),
                             sampler=sampler, ddim_steps=ddim_steps)
    raise TypeError(f"unsupported policy {type(policy).__name__}")


# ---- checkpoints ----


def save_lfd(path, policy) -> None:
    if isinstance(policy, BcPolicy):
        meta = {
            "kind": "lfd_bc",
            "sizes": policy.mlp.sizes,
            "activation": policy.mlp.activation,
            "action_horizon": policy.action_horizon,
            "obs_horizon": policy.obs_horizon,
            "act_dim": policy.act_dim,
        }
        arrays = {"params": policy.mlp.params}
    elif isinstance(policy, DiffusionPolicy):
        c = policy.cfg
        meta = {
            "kind": "lfd_diffusion",
            "sizes": policy.mlp.sizes,
            "activation": policy.mlp.activation,
            "act_dim": policy.act_dim,
            "config": {
                "obs_horizon": c.obs_horizon, "action_horizon": c.action_horizon,
                "pred_horizon": c.pred_horizon, "iterations": c.iterations,
                "schedule": c.schedule, "sampler": c.sampler,
                "ddim_steps": c.ddim_steps, "temb_dim": c.temb_dim,
            },
        }
        arrays = {"params": policy.mlp.params, "alpha_bar": policy.alpha_bar}
    else:
        raise TypeError(f"unsupported policy {type(policy).__name__}")
    arrays.update({
        "obs_mean": policy.obs_norm.mean, "obs_std": policy.obs_norm.std,
        "act_mean": policy.act_norm.mean, "act_std": policy.act_norm.std,
    })
    save_checkpoint(path, arrays, meta)


def load_lfd(path):
    arrays, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind not in ("lfd_bc", "lfd_diffusion"):
        raise ValueError("checkpoint does not hold a demo-trained policy")
    mlp = Mlp(meta["sizes"], meta["activation"])
    mlp.params[:] = arrays["params"]
    obs_norm = Normalizer(arrays["obs_mean"], arrays["obs_std"])
    act_norm = Normalizer(arrays["act_mean"], arrays["act_std"])
    if kind == "lfd_bc":
        return BcPolicy(mlp, obs_norm, act_norm, meta["action_horizon"],
                        meta["obs_horizon"], meta["act_dim"])
    cfg = DiffusionConfig(**meta["config"])
    return DiffusionPolicy(mlp, arrays["alpha_bar"], cfg, obs_norm, act_norm, meta["act_dim"])


# ---- closed loop + ablations ----


def closed_loop_success(task, policy, runs: int, rng: np.random.Generator,
                        replan: int = 8, sampler: str | None = None) -> float:
    """Receding-horizon rollout: predict a sequence, execute the first
    `replan` goals, repeat. Returns the fraction of successful runs."""
    wins = 0
    for _ in range(runs):
        obs = task.reset(rng)
        done = False
        success = False
        while not done:
            seq = sample_actions(policy, obs, rng=rng, sampler=sampler)
            for a in seq[:replan]:
                obs, done, success = task.step(a)
                if done:
                    break
        wins += bool(success)
    return wins / runs


ABLATION_SETTINGS = {
    # obs window x action window shapes: single/sequence obs, single/sequence action
    "Si-O-Si-A": (1, 1, 1),
    "Se-O-Se-A": (2, 8, 16),
    "Si-O-Se-A": (1, 8, 16),
}


def run_ablation(dataset: DemoDataset, fractions=(0.25, 0.5, 1.0),
                 methods=("bc", "ddim", "ddpm"), settings=None,
                 train_steps: int = 1000, seed: int = 0, eval_points: int = 128,
                 csv_path=None) -> list[dict]:
    """Grid over window settings, demo-data fractions and policy heads; each
    cell reports held-out MSE of the executed portion of the prediction."""
    settings = tuple(settings or ABLATION_SETTINGS)
    rows = []
    for setting in settings:
        if setting not in ABLATION_SETTINGS:
            raise ValueError(f"unknown setting {setting!r}")
        oh, ah, ph = ABLATION_SETTINGS[setting]
        O, A = dataset.windows(oh, ph)
        rng = np.random.default_rng(seed)
        perm = rng.permutation(O.shape[0])
        n_hold = max(1, int(0.2 * perm.size))
        hold, tr = perm[:n_hold][:eval_points], perm[n_hold:]
        for fraction in fractions:
            n = max(1, int(tr.size * fraction))
            sub = (O[tr[:n]], A[tr[:n]])
            for method in methods:
                if method == "bc":
                    pol, _ = train_bc(sub, BcConfig(obs_horizon=oh, action_horizon=ah,
                                                    hidden=(64, 64), train_steps=train_steps,
                                                    holdout=0.0, seed=seed))
                    pred = np.stack([pol.predict(O[i]) for i in hold])
                elif method in ("ddpm", "ddim"):
                    cfg = DiffusionConfig(obs_horizon=oh, action_horizon=ah, pred_horizon=ph,
                                          hidden=(64, 64), train_steps=train_steps,
                                          sampler=method, seed=seed)
                    pol, _ = train_diffusion(sub, cfg)
                    srng = np.random.default_rng(seed + 1)
                    pred = np.stack([pol.sample(O[i], srng)[:ah] for i in hold])
                else:
                    raise ValueError(f"unknown method {method!r}")
                mse = float(((pred - A[hold][:, :ah]) ** 2).mean())
                rows.append({"setting": setting, "fraction": float(fraction),
                             "method": method, "mse": mse})
    if csv_path is not None:
        write_csv(csv_path, rows)
    return rows
