"""Small neural toolkit on numpy: MLP, Gaussian policy, Adam, checkpoints.

Parameters live in one flat vector per module so the optimizer, gradient
checker, and checkpoint format all work on plain arrays. Backward passes are
hand-written reverse mode; `grad_check` verifies them against central finite
differences.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CKPT_MAGIC = b"MNET"
CKPT_VERSION = 1

LOG_2PI = float(np.log(2.0 * np.pi))


def elu(z: np.ndarray) -> np.ndarray:
    # clamp the exp argument: np.where evaluates both branches
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


ACTIVATIONS = {
    "elu": (elu, elu_grad),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
}


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.normal(0.0, 1.0, (max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class Mlp:
    """Fully-connected net, flat parameter vector, manual forward/backward.

    sizes = [in, hidden..., out]; hidden layers use the activation, the output
    layer is linear. Layout per layer: row-major W (in, out) then bias (out).
    """

    def __init__(self, sizes, activation: str = "elu", rng=None, out_scale: float = 1.0,
                 dtype=np.float64):
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.dtype = dtype
        self._offsets = []
        off = 0
        for i in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[i], self.sizes[i + 1]
            self._offsets.append((off, off + n_in * n_out, off + n_in * n_out + n_out))
            off += (n_in + 1) * n_out
        self.params = np.zeros(off, dtype=dtype)
        rng = rng or np.random.default_rng(0)
        last = len(self.sizes) - 2
        for i in range(len(self.sizes) - 1):
            gain = out_scale if i == last else np.sqrt(2.0)
            w, _ = self.layer(i)
            w[:] = orthogonal(rng, self.sizes[i], self.sizes[i + 1], gain)

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def layer(self, i: int):
        w0, b0, b1 = self._offsets[i]
        n_in, n_out = self.sizes[i], self.sizes[i + 1]
        return self.params[w0:b0].reshape(n_in, n_out), self.params[b0:b1]

    def forward(self, x: np.ndarray, need_cache: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.n_in:
            raise ValueError(f"input width {h.shape[-1]} != {self.n_in}")
        act, _ = ACTIVATIONS[self.activation]
        hs = [h]
        pres = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            w, b = self.layer(i)
            z = h @ w + b
            pres.append(z)
            h = act(z) if i < n_layers - 1 else z
            hs.append(h)
        out = h[0] if squeeze else h
        if need_cache:
            return out, (hs, pres, squeeze)
        return out

    def backward(self, cache, dy: np.ndarray):
        """Returns (parameter gradient, input gradient) for the cached pass."""
        hs, pres, squeeze = cache
        _, dact = ACTIVATIONS[self.activation]
        dy = np.asarray(dy, dtype=self.dtype)
        dh = dy[None, :] if squeeze else dy
        grads = np.zeros_like(self.params)
        n_layers = len(self.sizes) - 1
        for i in reversed(range(n_layers)):
            dz = dh if i == n_layers - 1 else dh * dact(pres[i])
            w0, b0, b1 = self._offsets[i]
            w, _ = self.layer(i)
            grads[w0:b0] += (hs[i].T @ dz).reshape(-1)
            grads[b0:b1] += dz.sum(axis=0)
            dh = dz @ w.T
        return grads, (dh[0] if squeeze else dh)


class GaussianPolicy:
    """MLP mean + state-independent log-std head over a flat joint vector."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(512, 256, 128),
                 activation: str = "elu", init_std: float = 1.0, rng=None,
                 out_scale: float = 0.01, dtype=np.float64):
        if init_std <= 0:
            raise ValueError("init_std must be > 0")
        self.mlp = Mlp([obs_dim, *hidden, act_dim], activation, rng, out_scale, dtype)
        self.act_dim = act_dim
        self.log_std = np.full(act_dim, np.log(init_std), dtype=dtype)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.mlp.params, self.log_std])

    @params.setter
    def params(self, p: np.ndarray) -> None:
        n = self.mlp.n_params
        if p.shape != (n + self.act_dim,):
            raise ValueError("parameter vector length mismatch")
        self.mlp.params[:] = p[:n]
        self.log_std[:] = p[n:]

    @property
    def n_params(self) -> int:
        return self.mlp.n_params + self.act_dim

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp.forward(obs)

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + rng.normal(0.0, 1.0, mu.shape) * self.std

    def log_prob(self, mean: np.ndarray, action: np.ndarray) -> np.ndarray:
        z = (action - mean) / self.std
        return -0.5 * np.sum(z ** 2, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def logp_backward(self, mean: np.ndarray, action: np.ndarray, coeff: np.ndarray):
        """Gradient of sum_i coeff_i * logp_i wrt (mean, log_std)."""
        std = self.std
        z = (action - mean) / std
        c = np.asarray(coeff, dtype=mean.dtype)[..., None]
        dmean = c * z / std
        dlogstd = np.sum(c * (z ** 2 - 1.0), axis=tuple(range(z.ndim - 1)))
        return dmean, dlogstd


class Adam:
    """Adam with global-norm gradient clipping and decoupled weight decay."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
                 max_grad_norm: float | None = 0.2):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.faults = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> dict:
        """Updates params in place; skips (and counts) non-finite gradients."""
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape mismatch")
        if not np.isfinite(grads).all():
            self.faults += 1
            return {"fault": True, "grad_norm": float("nan"), "clipped": False}
        norm = float(np.linalg.norm(grads))
        clipped = self.max_grad_norm is not None and norm > self.max_grad_norm
        if clipped:
            grads = grads * (self.max_grad_norm / norm)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        if self.weight_decay:
            params -= self.lr * self.weight_decay * params
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return {"fault": False, "grad_norm": norm, "clipped": clipped}


def grad_check(loss_and_grad, params: np.ndarray, h: float = 1e-6, rng=None,
               n_dims: int | None = None) -> float:
    """Max relative error of the analytic gradient vs central differences.

    The denominator is floored at 1 so components much smaller than the loss
    scale are compared absolutely; otherwise FD roundoff (~eps/h) dominates.
    Checks every dimension unless n_dims limits to a random subset.
    """
    _, g = loss_and_grad(params)
    dims = np.arange(params.shape[0])
    if n_dims is not None and n_dims < dims.shape[0]:
        rng = rng or np.random.default_rng(0)
        dims = rng.choice(dims, size=n_dims, replace=False)
    worst = 0.0
    for i in dims:
        p = params.copy()
        p[i] += h
        hi, _ = loss_and_grad(p)
        p[i] -= 2 * h
        lo, _ = loss_and_grad(p)
        fd = (hi - lo) / (2 * h)
        denom = max(abs(fd), abs(g[i]), 1.0)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst


# ---- checkpoint container ----


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """magic | u32 version | u64 header length | header JSON | LE payload."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str.replace(">", "<").replace("=", "<"),
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save_policy(path, policy: GaussianPolicy, meta: dict | None = None) -> None:
    info = {
        "kind": "gaussian_policy",
        "sizes": policy.mlp.sizes,
        "activation": policy.mlp.activation,
    }
    info.update(meta or {})
    save_checkpoint(path, {"mlp": policy.mlp.params, "log_std": policy.log_std}, info)


def load_policy(path) -> tuple[GaussianPolicy, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "gaussian_policy":
        raise ValueError("checkpoint does not hold a policy")
    sizes = meta["sizes"]
    pol = GaussianPolicy(sizes[0], sizes[-1], hidden=tuple(sizes[1:-1]),
                         activation=meta["activation"])
    pol.mlp.params[:] = arrays["mlp"]
    pol.log_std[:] = arrays["log_std"]
    return pol, meta


def save_mlp(path, mlp: Mlp, meta: dict | None = None) -> None:
    info = {"kind": "mlp", "sizes": mlp.sizes, "activation": mlp.activation}
    info.update(meta or {})
    save_checkpoint(path, {"params": mlp.params}, info)


def load_mlp(path) -> tuple[Mlp, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "mlp":
        raise ValueError("checkpoint does not hold an mlp")
    m = Mlp(meta["sizes"], meta["activation"])
    m.params[:] = arrays["params"]
    return m, meta
