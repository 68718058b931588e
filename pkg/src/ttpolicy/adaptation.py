"""Probabilistic system adaptation from proprioceptive history.

Simulated rollouts under the parameter-exact greedy policy provide
(history, true-parameter) pairs; a small fully connected network trained
on them estimates parameters online. The estimate feeds policy retrieval
either as a point mass (explicit adaptation) or as a uniform band around
it (implicit adaptation).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .contraction import ParamDistribution, dist_delta, dist_uniform_band
from .errors import DataError, DomainError
from .ttgo import PolicyRetriever

LAYER_WIDTHS = (512, 256, 128, 64)


@dataclass
class ProprioHistory:
    """Flattened window of k past (state, action) pairs, oldest first."""

    window: int
    data: np.ndarray
    padded: bool = False

    @classmethod
    def from_steps(cls, states, actions, t, window, state_dim, action_dim):
        """Window ending just before step t; zero-padded at episode starts."""
        flat = np.zeros(window * (state_dim + action_dim))
        padded = t < window
        width = state_dim + action_dim
        for j in range(window):
            step = t - window + j
            if step >= 0:
                flat[j * width : j * width + state_dim] = states[step]
                flat[j * width + state_dim : (j + 1) * width] = actions[step]
        return cls(window, flat, padded)


@dataclass
class AdaptDataset:
    histories: np.ndarray  # (N, L)
    alphas: np.ndarray  # (N, p)
    padded: np.ndarray  # (N,) bool
    env: str = ""
    seed: int = 0
    policy_id: str = ""
    window: int = 0
    state_dim: int = 0
    action_dim: int = 0
    param_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    param_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.histories)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# env={self.env}\n# seed={self.seed}\n# policy={self.policy_id}\n")
            f.write(f"# window={self.window}\n# state_dim={self.state_dim}\n")
            f.write(f"# action_dim={self.action_dim}\n")
            f.write(f"# param_lower={','.join(repr(float(v)) for v in self.param_lower)}\n")
            f.write(f"# param_upper={','.join(repr(float(v)) for v in self.param_upper)}\n")
            writer = csv.writer(f)
            nl, na = self.histories.shape[1], self.alphas.shape[1]
            writer.writerow(
                ["padded"] + [f"h{j}" for j in range(nl)] + [f"alpha{j}" for j in range(na)]
            )
            for i in range(len(self)):
                writer.writerow(
                    [int(self.padded[i])] + list(self.histories[i]) + list(self.alphas[i])
                )

    @classmethod
    def load_csv(cls, path):
        meta = {}
        rows = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line.startswith("#"):
                    k, v = line[1:].strip().split("=", 1)
                    meta[k] = v
                elif line and not line.startswith("padded"):
                    rows.append([float(t) for t in line.split(",")])
        arr = np.array(rows)
        n_alpha = len(meta["param_lower"].split(","))
        hist = arr[:, 1 : arr.shape[1] - n_alpha]
        return cls(
            histories=hist,
            alphas=arr[:, arr.shape[1] - n_alpha :],
            padded=arr[:, 0].astype(bool),
            env=meta.get("env", ""),
            seed=int(meta.get("seed", 0)),
            policy_id=meta.get("policy", ""),
            window=int(meta.get("window", 0)),
            state_dim=int(meta.get("state_dim", 0)),
            action_dim=int(meta.get("action_dim", 0)),
            param_lower=np.array([float(v) for v in meta["param_lower"].split(",")]),
            param_upper=np.array([float(v) for v in meta["param_upper"].split(",")]),
        )


def collect_dataset(env, advantage_model, n_rollouts, k, seed, horizon=None):
    """Rollouts under the parameter-exact greedy policy, recording
    (history, alpha) at every step with t >= 1.

    One-shot environments record one sample per attempt after the first,
    the history being the previous attempt's sliding trajectory
    downsampled to k points alongside its impulse.
    """
    from .contraction import contract

    rng = np.random.default_rng(seed)
    horizon = horizon if horizon is not None else env.spec.horizon
    m, n = env.state_dim, env.action_dim
    histories, alphas, padded = [], [], []
    for _ in range(n_rollouts):
        alpha, x0 = env.sample_instance(rng)
        dist = dist_delta(alpha, _param_grid(advantage_model))
        a_xu = contract(advantage_model, dist)
        retr = PolicyRetriever(a_xu, m, seed=int(rng.integers(2**31)))
        if env.spec.one_shot:
            hist = _one_shot_attempts(env, retr, alpha, x0, k, rng)
            if hist is not None:
                histories.append(hist)
                alphas.append(alpha)
                padded.append(False)
            continue
        states, actions = [], []
        x = x0.copy()
        for t in range(horizon):
            u, _ = retr.query(_clip_to(a_xu.grid, x, m))
            xn, _, done = env.step(alpha, x, u)
            states.append(x.copy())
            actions.append(u.copy())
            if t >= 1:
                h = ProprioHistory.from_steps(states, actions, t, k, m, n)
                histories.append(h.data)
                alphas.append(alpha.copy())
                padded.append(h.padded)
            x = xn
            if done:
                break
    if not histories:
        width = k * (m + n)
        return AdaptDataset(
            np.zeros((0, width)), np.zeros((0, env.param_dim)), np.zeros(0, dtype=bool),
            env=env.name, seed=seed, policy_id="da-greedy", window=k,
            state_dim=m, action_dim=n,
            param_lower=np.array([b[0] for b in env.spec.param_bounds]),
            param_upper=np.array([b[1] for b in env.spec.param_bounds]),
        )
    return AdaptDataset(
        np.array(histories), np.array(alphas), np.array(padded, dtype=bool),
        env=env.name, seed=seed, policy_id="da-greedy", window=k,
        state_dim=m, action_dim=n,
        param_lower=np.array([b[0] for b in env.spec.param_bounds]),
        param_upper=np.array([b[1] for b in env.spec.param_bounds]),
    )


def _hit_slide_positions(env, alpha, x0, u, k):
    """Exact positions of the Coulomb-decelerated slide at k uniform times."""
    m, mu = alpha
    unorm = np.linalg.norm(u)
    if unorm == 0:
        return np.tile(np.asarray(x0, dtype=np.float64), (k, 1))
    t_stop = unorm / (m * mu * env.g)
    direction = np.asarray(u, dtype=np.float64) / unorm
    ts = np.linspace(0.0, t_stop, k)
    dist = (unorm / m) * ts - 0.5 * mu * env.g * ts**2
    return np.asarray(x0, dtype=np.float64)[None, :] + direction[None, :] * dist[:, None]


def _one_shot_attempts(env, retr, alpha, x0, k, rng):
    """Two attempts: a blind first hit, then observe its trajectory."""
    lo, hi = np.array(env.spec.action_bounds).T
    u0 = rng.uniform(lo, hi)
    positions = _hit_slide_positions(env, alpha, x0, u0, k)
    width = env.state_dim + env.action_dim
    flat = np.zeros(k * width)
    for j in range(k):
        flat[j * width : j * width + env.state_dim] = positions[j]
        flat[j * width + env.state_dim : (j + 1) * width] = u0
    return flat


def _param_grid(advantage_model):
    return advantage_model.A.grid.subgrid(0, advantage_model.n_param_dims)


def _clip_to(grid, x, m):
    return np.clip(x, grid.lower[:m], grid.upper[:m])


class Regressor:
    """Fully connected ReLU network with frozen input/output normalization."""

    def __init__(self, weights, biases, in_mean, in_std, out_mean, out_std,
                 param_lower, param_upper):
        self.weights = weights
        self.biases = biases
        self.in_mean = in_mean
        self.in_std = in_std
        self.out_mean = out_mean
        self.out_std = out_std
        self.param_lower = param_lower
        self.param_upper = param_upper

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def forward_normalized(self, z):
        h = z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def save(self, path):
        with open(path, "wb") as f:
            f.write(serialize_regressor(self))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return deserialize_regressor(f.read())


@dataclass
class TrainReport:
    train_mse: float
    val_mse: float
    epochs: int
    n_train: int
    n_val: int


def train_regressor(dataset, epochs=50, learning_rate=1e-3, seed=0, batch_size=256,
                    hidden=LAYER_WIDTHS):
    """Adam-trained MSE regression from histories to parameters.

    Inputs and outputs are normalized to zero mean / unit variance (stats
    frozen into the regressor); reports train/validation MSE on a 90/10
    split in normalized units.
    """
    if len(dataset) == 0:
        raise DomainError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    x = np.asarray(dataset.histories, dtype=np.float64)
    y = np.asarray(dataset.alphas, dtype=np.float64)
    in_mean = x.mean(axis=0)
    in_std = np.maximum(x.std(axis=0), 1e-8)
    out_mean = y.mean(axis=0)
    out_std = np.maximum(y.std(axis=0), 1e-8)
    xs = (x - in_mean) / in_std
    ys = (y - out_mean) / out_std

    perm = rng.permutation(len(xs))
    n_val = max(1, len(xs) // 10)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx
    xt, yt = xs[train_idx], ys[train_idx]
    xv, yv = xs[val_idx], ys[val_idx]

    dims = [x.shape[1], *hidden, y.shape[1]]
    weights = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
               for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    for _ in range(epochs):
        order = rng.permutation(len(xt))
        for s in range(0, len(order), batch_size):
            batch = order[s : s + batch_size]
            xb, yb = xt[batch], yt[batch]
            acts = [xb]
            h = xb
            pre = []
            for w, b in zip(weights[:-1], biases[:-1]):
                z = h @ w + b
                pre.append(z)
                h = np.maximum(z, 0.0)
                acts.append(h)
            pred = h @ weights[-1] + biases[-1]
            if not np.all(np.isfinite(pred)):
                raise DataError("training diverged: non-finite predictions")
            grad = 2.0 * (pred - yb) / len(xb)
            grads_w = [None] * len(weights)
            grads_b = [None] * len(weights)
            grads_w[-1] = acts[-1].T @ grad
            grads_b[-1] = grad.sum(axis=0)
            delta = grad @ weights[-1].T
            for layer in range(len(weights) - 2, -1, -1):
                delta = delta * (pre[layer] > 0)
                grads_w[layer] = acts[layer].T @ delta
                grads_b[layer] = delta.sum(axis=0)
                if layer > 0:
                    delta = delta @ weights[layer].T
            step += 1
            corr1 = 1.0 - beta1**step
            corr2 = 1.0 - beta2**step
            for i in range(len(weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * grads_w[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * grads_w[i] ** 2
                weights[i] -= learning_rate * (m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + adam_eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * grads_b[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * grads_b[i] ** 2
                biases[i] -= learning_rate * (m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + adam_eps)

    reg = Regressor(weights, biases, in_mean, in_std, out_mean, out_std,
                    dataset.param_lower.copy(), dataset.param_upper.copy())
    train_mse = float(np.mean((reg.forward_normalized(xt) - yt) ** 2))
    val_mse = float(np.mean((reg.forward_normalized(xv) - yv) ** 2))
    return reg, TrainReport(train_mse, val_mse, epochs, len(xt), len(xv))


def estimate(regressor, history):
    """Denormalized forward pass, clamped to the parameter bounds."""
    h = history.data if isinstance(history, ProprioHistory) else np.asarray(history, dtype=np.float64)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != regressor.in_dim:
        raise DomainError(
            f"history length {h.shape[1]} does not match trained window {regressor.in_dim}"
        )
    z = (h - regressor.in_mean) / regressor.in_std
    nu = regressor.forward_normalized(z) * regressor.out_std + regressor.out_mean
    nu = np.clip(nu, regressor.param_lower, regressor.param_upper)
    return nu[0] if single else nu


def ima_distribution(nu, w, grid):
    """Uniform band of width w around the (clamped) estimate."""
    nu = np.clip(np.asarray(nu, dtype=np.float64), grid.lower, grid.upper)
    return dist_uniform_band(nu, w, grid)


def ema_pointwise(nu, grid):
    """Point-mass at the (clamped) estimate: explicit adaptation."""
    nu = np.clip(np.asarray(nu, dtype=np.float64), grid.lower, grid.upper)
    return dist_delta(nu, grid)


# ----------------------------------------------------------------------
# Binary format: magic "REG1", little-endian
#   u32 layer count; per layer u32 in, u32 out, in*out f64 weights
#   (row-major), out f64 biases; then six f64 vectors: input mean/std
#   (in_dim of the first layer), output mean/std and clamp lower/upper
#   bounds (out_dim of the last layer).
# ----------------------------------------------------------------------

_REG_MAGIC = b"REG1"


def serialize_regressor(reg):
    buf = io.BytesIO()
    buf.write(_REG_MAGIC)
    buf.write(struct.pack("<I", len(reg.weights)))
    for w, b in zip(reg.weights, reg.biases):
        buf.write(struct.pack("<II", w.shape[0], w.shape[1]))
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for vec in (reg.in_mean, reg.in_std, reg.out_mean, reg.out_std,
                reg.param_lower, reg.param_upper):
        buf.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize_regressor(data):
    if data[:4] != _REG_MAGIC:
        raise DomainError("not a REG1 regressor file")
    off = 4
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    weights, biases = [], []
    for _ in range(n_layers):
        din, dout = struct.unpack_from("<II", data, off)
        off += 8
        w = np.frombuffer(data, dtype="<f8", count=din * dout, offset=off).reshape(din, dout).copy()
        off += 8 * din * dout
        b = np.frombuffer(data, dtype="<f8", count=dout, offset=off).copy()
        off += 8 * dout
        weights.append(w)
        biases.append(b)
    in_dim = weights[0].shape[0]
    out_dim = weights[-1].shape[1]
    vecs = []
    for size in (in_dim, in_dim, out_dim, out_dim, out_dim, out_dim):
        vecs.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).copy())
        off += 8 * size
    return Regressor(weights, biases, *vecs)
