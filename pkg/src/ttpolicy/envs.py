"""Simulated manipulation systems: dynamics, rewards, rollouts, oracles.

All four environments are deterministic and vectorized over batches of
(parameter, state, action) triples, which is what the value-iteration
oracles need. Rewards are non-positive and reach zero only at the target
with zero action.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .tt import Grid

G_DEFAULT = 9.81


@dataclass
class EnvSpec:
    name: str
    param_bounds: list
    state_bounds: list
    action_bounds: list
    dt: float | None
    horizon: int
    one_shot: bool = False


class Environment:
    """Deterministic environment with batch stepping.

    Subclasses implement _step_batch(alpha, x, u) -> (x_next, reward, done)
    on float64 arrays of shapes (B, p), (B, m), (B, n).
    """

    spec: EnvSpec

    @property
    def name(self):
        return self.spec.name

    @property
    def param_dim(self):
        return len(self.spec.param_bounds)

    @property
    def state_dim(self):
        return len(self.spec.state_bounds)

    @property
    def action_dim(self):
        return len(self.spec.action_bounds)

    def step(self, alpha, x, u):
        xn, r, done = self.step_batch(
            np.atleast_2d(np.asarray(alpha, dtype=np.float64)),
            np.atleast_2d(np.asarray(x, dtype=np.float64)),
            np.atleast_2d(np.asarray(u, dtype=np.float64)),
        )
        return xn[0], float(r[0]), bool(done[0])

    def step_batch(self, alpha, x, u):
        alpha = np.asarray(alpha, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        xn, r, done = self._step_batch(alpha, x, u)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(r))):
            bad = int(np.argmax(~(np.all(np.isfinite(xn), axis=1) & np.isfinite(r))))
            raise DataError(
                f"{self.name}: non-finite transition at alpha={alpha[bad]}, x={x[bad]}, u={u[bad]}"
            )
        return xn, r, done

    def goal_error(self, x):
        raise NotImplementedError

    def sample_instance(self, rng):
        """(true parameters, initial state) draw for evaluation episodes."""
        raise NotImplementedError

    def sample_alpha(self, rng):
        lo, hi = np.array(self.spec.param_bounds).T
        return rng.uniform(lo, hi)

    def clamp_state(self, x):
        lo, hi = np.array(self.spec.state_bounds).T
        return np.clip(x, lo, hi)

    def clamp_alpha(self, alpha):
        lo, hi = np.array(self.spec.param_bounds).T
        return np.clip(alpha, lo, hi)


class SpringDamperEnv(Environment):
    """Forced mass-spring-damper, forward Euler at dt = 0.01 s.

    State (position, velocity), action a scalar force, parameters
    (mass, stiffness, damping). Quadratic stage reward with Q = I,
    R = 0.01, scaled by dt.
    """

    def __init__(self):
        self.spec = EnvSpec(
            name="spring",
            param_bounds=[(0.5, 2.0), (1.0, 10.0), (0.2, 2.0)],
            state_bounds=[(-2.0, 2.0), (-3.0, 3.0)],
            action_bounds=[(-30.0, 30.0)],
            dt=0.01,
            horizon=600,
        )

    def matrices(self, alpha):
        m, k, b = alpha
        a_mat = np.array([[0.0, 1.0], [-k / m, -b / m]])
        b_mat = np.array([[0.0], [1.0 / m]])
        return a_mat, b_mat

    def _step_batch(self, alpha, x, u):
        m, k, b = alpha[:, 0], alpha[:, 1], alpha[:, 2]
        pos, vel = x[:, 0], x[:, 1]
        force = u[:, 0]
        dt = self.spec.dt
        acc = (-k * pos - b * vel + force) / m
        xn = np.column_stack([pos + vel * dt, vel + acc * dt])
        reward = -(pos**2 + vel**2 + 0.01 * force**2) * dt
        return xn, reward, np.zeros(len(reward), dtype=bool)

    def goal_error(self, x):
        return float(np.linalg.norm(x))

    def sample_instance(self, rng):
        return self.sample_alpha(rng), np.array([rng.uniform(-1.2, 1.2), rng.uniform(-1.0, 1.0)])


class HitEnv(Environment):
    """One-shot planar hit: impulse launches the object, Coulomb friction stops it.

    Final position is x0 + 0.5 * u * |u| / (m^2 mu g), i.e. the rest point at
    the sliding stop time t = |u| / (m mu g). Reward penalizes the squared
    miss from the target and the squared impulse magnitude.
    """

    def __init__(self, g=G_DEFAULT, target=(0.0, 0.0)):
        self.g = g
        self.target = np.asarray(target, dtype=np.float64)
        self.spec = EnvSpec(
            name="hit",
            param_bounds=[(0.1, 1.0), (0.05, 0.5)],
            state_bounds=[(-1.0, 1.0), (-1.0, 1.0)],
            action_bounds=[(-1.4, 1.4), (-1.4, 1.4)],
            dt=None,
            horizon=1,
            one_shot=True,
        )

    def _step_batch(self, alpha, x, u):
        m, mu = alpha[:, 0], alpha[:, 1]
        unorm = np.linalg.norm(u, axis=1)
        travel = np.zeros_like(unorm)
        moving = unorm > 0
        travel[moving] = unorm[moving] ** 2 / (2.0 * m[moving] ** 2 * mu[moving] * self.g)
        direction = np.zeros_like(u)
        direction[moving] = u[moving] / unorm[moving, None]
        xf = x + direction * travel[:, None]
        # bounded workspace: overshooting stops at the table edge, which also
        # keeps the reward's dynamic range compatible with relative-accuracy
        # cross targets
        xf = self.clamp_state(xf)
        miss = xf - self.target
        reward = -(np.sum(miss**2, axis=1) + 0.01 * unorm**2)
        return xf, reward, np.ones(len(reward), dtype=bool)

    def goal_error(self, x):
        return float(np.linalg.norm(np.asarray(x) - self.target))

    def aimed_impulse(self, alpha, x0):
        """Impulse whose sliding stop lands exactly on the target."""
        m, mu = alpha
        delta = self.target - np.asarray(x0, dtype=np.float64)
        dist = np.linalg.norm(delta)
        if dist == 0:
            return np.zeros(2)
        return m * np.sqrt(2.0 * mu * self.g * dist) * delta / dist

    def sample_instance(self, rng):
        # Evaluation instances stay in the light/slick regime where the
        # optimal impulse (and its 0.01|u|^2 cost) is small against squared
        # misses; the grids still span the full parameter box.
        alpha = np.array([rng.uniform(0.1, 0.45), rng.uniform(0.05, 0.3)])
        while True:
            x0 = rng.uniform(-0.9, 0.9, size=2)
            if np.linalg.norm(x0 - self.target) >= 0.7:
                return alpha, x0


class PushEnv(Environment):
    """Quasi-static planar pushing of a disc through a limit-surface model.

    State (s_x, s_y, s_theta, psi, phi): object pose in the world plus the
    pusher's angular position psi and gap phi on the object boundary.
    Action (f_x, f_y, psi_dot, phi_dot): contact force in the body frame
    and pusher repositioning rates. Force transmits only while the gap is
    below 1 mm; the limit surface maps the wrench to a body twist with
    c = tau_max / f_max = (2/3) r (uniform-pressure disc) and the mobility
    gain kappa normalized so f_max produces 0.05 m/s of slip.
    """

    PHI_CONTACT = 1e-3
    L_P = 0.005
    L_O = 0.01 * np.pi

    def __init__(self, g=G_DEFAULT, rho=1.0):
        self.g = g
        self.rho = rho
        self.spec = EnvSpec(
            name="push",
            param_bounds=[(0.2, 1.5), (0.04, 0.1), (0.1, 0.5)],
            state_bounds=[(-0.12, 0.12), (-0.12, 0.12), (-1.5, 1.5), (-np.pi, np.pi), (0.0, 0.005)],
            action_bounds=[(-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0), (-0.02, 0.02)],
            dt=0.05,
            horizon=120,
        )

    def _step_batch(self, alpha, x, u):
        m, r, mu = alpha[:, 0], alpha[:, 1], alpha[:, 2]
        sx, sy, sth, psi, phi = (x[:, k] for k in range(5))
        fx, fy, psid, phid = (u[:, k] for k in range(4))
        dt = self.spec.dt
        f_max = mu * m * self.g
        c = (2.0 / 3.0) * r
        kappa = 0.05 / f_max
        px = -(r + phi) * np.cos(psi)
        py = -(r + phi) * np.sin(psi)
        tau = px * fy - py * fx
        contact = phi <= self.PHI_CONTACT
        vx = np.where(contact, kappa * fx, 0.0)
        vy = np.where(contact, kappa * fy, 0.0)
        om = np.where(contact, kappa * tau / c**2, 0.0)
        cth, sth_ = np.cos(sth), np.sin(sth)
        xn = np.column_stack(
            [
                sx + (cth * vx - sth_ * vy) * dt,
                sy + (sth_ * vx + cth * vy) * dt,
                sth + om * dt,
                psi + psid * dt,
                np.maximum(phi + phid * dt, 0.0),
            ]
        )
        c_p = np.hypot(sx, sy) / self.L_P
        c_o = np.abs(sth) / self.L_O
        c_f = np.hypot(fx, fy)
        c_v = np.hypot(psid, phid)
        reward = -(self.rho * c_p + c_o + 0.01 * c_f + 0.01 * c_v)
        return xn, reward, np.zeros(len(reward), dtype=bool)

    def goal_error(self, x):
        return float(np.linalg.norm(np.asarray(x)[:3]))

    def sample_instance(self, rng):
        while True:
            sx, sy = rng.uniform(-0.1, 0.1, size=2)
            if np.hypot(sx, sy) >= 0.04:
                break
        x0 = np.array([sx, sy, rng.uniform(-1.0, 1.0), rng.uniform(-np.pi, np.pi), 0.004])
        return self.sample_alpha(rng), x0


class ReorientEnv(Environment):
    """In-gripper reorientation braked by torsional finger friction.

    State (theta, theta_dot), action the normal force f_n >= 0. Gravity
    torque m g l sin(theta) drives the object toward the upright target
    theta = pi; the two finger contacts brake with torque mu_t * f_n each,
    opposing the motion. Point mass at distance l: I = m l^2.
    """

    BETA = 1e4
    TARGET = np.pi

    def __init__(self, g=G_DEFAULT):
        self.g = g
        # State box sized to the free-swing envelope of the sampled starts
        # (theta0 in [2.7, 3.0], theta_dot0 <= 1.4): for the fastest object
        # (l = 0.05) the unbraked speed at the top stays below 6.5 rad/s and
        # the swing turns around by theta ~ 3.7, so trajectories rarely
        # touch the clamp.
        self.spec = EnvSpec(
            name="reorient",
            param_bounds=[(0.1, 0.8), (0.05, 0.2), (0.05, 0.3)],
            state_bounds=[(2.3, 4.0), (-7.0, 7.0)],
            action_bounds=[(0.0, 5.0)],
            dt=0.01,
            horizon=250,
        )

    def _step_batch(self, alpha, x, u):
        m, l, mu_t = alpha[:, 0], alpha[:, 1], alpha[:, 2]
        th, thd = x[:, 0], x[:, 1]
        fn = np.maximum(u[:, 0], 0.0)
        dt = self.spec.dt
        inertia = m * l**2
        tau_g = m * self.g * l * np.sin(th)
        thd_free = thd + (tau_g / inertia) * dt
        # Coulomb braking with a stiction clamp: within one step friction can
        # at most stop the motion, never reverse it.
        dv_fric = (2.0 * mu_t * fn / inertia) * dt
        thd_next = thd_free - np.sign(thd_free) * np.minimum(dv_fric, np.abs(thd_free))
        xn = np.column_stack([th + thd * dt, thd_next])
        reward = -(self.BETA * np.abs(th - self.TARGET) + np.abs(fn))
        return xn, reward, np.zeros(len(reward), dtype=bool)

    def goal_error(self, x):
        return float(abs(x[0] - self.TARGET))

    def sample_instance(self, rng):
        x0 = np.array([rng.uniform(2.7, 3.0), rng.uniform(0.3, 1.4)])
        return self.sample_alpha(rng), x0


_REGISTRY = {
    "spring": SpringDamperEnv,
    "hit": HitEnv,
    "push": PushEnv,
    "reorient": ReorientEnv,
}


def make_env(name, **kwargs):
    try:
        return _REGISTRY[name](**kwargs)
    except KeyError:
        raise DomainError(f"unknown environment {name!r}; choose from {sorted(_REGISTRY)}") from None


@dataclass
class EnvGrids:
    """Value grid over (params, state) and advantage grid over (params, state, action)."""

    value_grid: Grid
    adv_grid: Grid
    n_param_dims: int
    n_state_dims: int
    n_action_dims: int

    @property
    def param_grid(self):
        return self.adv_grid.subgrid(0, self.n_param_dims)

    @property
    def action_grid(self):
        return self.adv_grid.subgrid(self.n_param_dims + self.n_state_dims)


def env_grids(env, nodes_param, nodes_state, nodes_action):
    """Uniform grids for an environment; node counts are scalars or per-dim lists."""

    def counts(n, dims):
        return [n] * dims if np.isscalar(n) else list(n)

    np_ = counts(nodes_param, env.param_dim)
    ns = counts(nodes_state, env.state_dim)
    na = counts(nodes_action, env.action_dim)
    value_grid = Grid.regular(env.spec.param_bounds + env.spec.state_bounds, np_ + ns)
    adv_grid = Grid.regular(
        env.spec.param_bounds + env.spec.state_bounds + env.spec.action_bounds, np_ + ns + na
    )
    return EnvGrids(value_grid, adv_grid, env.param_dim, env.state_dim, env.action_dim)


def rollout(env, alpha_true, policy, x0, horizon=None):
    """Apply `policy` (state -> action) until done or horizon.

    Returns (trajectory, cumulative_reward) where the trajectory is a list of
    (state, action, reward) triples; states are the pre-step states.
    """
    horizon = env.spec.horizon if horizon is None else horizon
    alpha_true = np.asarray(alpha_true, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    lo, hi = np.array(env.spec.action_bounds).T
    traj = []
    total = 0.0
    for _ in range(horizon):
        u = np.clip(np.asarray(policy(x), dtype=np.float64), lo, hi)
        xn, r, done = env.step(alpha_true, x, u)
        traj.append((x.copy(), u.copy(), r))
        total += r
        x = xn
        if done:
            break
    return Trajectory(traj, x, total, env)


class Trajectory:
    def __init__(self, steps, final_state, cumulative_reward, env):
        self.steps = steps
        self.final_state = np.asarray(final_state, dtype=np.float64)
        self.cumulative_reward = float(cumulative_reward)
        self.env = env

    def __len__(self):
        return len(self.steps)

    @property
    def states(self):
        return np.array([s for s, _, _ in self.steps])

    @property
    def actions(self):
        return np.array([u for _, u, _ in self.steps])

    @property
    def rewards(self):
        return np.array([r for _, _, r in self.steps])

    def final_error(self):
        return self.env.goal_error(self.final_state)

    def export_csv(self, path):
        m, n = self.env.state_dim, self.env.action_dim
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["t"]
                + [f"x{k}" for k in range(m)]
                + [f"u{k}" for k in range(n)]
                + ["r", "cumulative_r"]
            )
            running = 0.0
            for t, (x, u, r) in enumerate(self.steps):
                running += r
                writer.writerow([t] + list(x) + list(u) + [r, running])


def are_oracle(alpha, q=None, r=None):
    """Optimal LQR gain and value matrix for the spring-damper system.

    Solves the continuous algebraic Riccati equation by Newton-Kleinman
    iteration (Lyapunov solves with a stabilizing start; the open-loop
    spring-damper is already Hurwitz for positive parameters). Returns
    (K, P) with u* = -K x and V*(x) = -x^T P x up to discretization.
    """
    from scipy.linalg import solve_continuous_lyapunov

    m, k, b = alpha
    if min(m, k, b) <= 0:
        raise DomainError("spring-damper parameters must be positive")
    q = np.eye(2) if q is None else np.asarray(q, dtype=np.float64)
    r = np.array([[0.01]]) if r is None else np.atleast_2d(np.asarray(r, dtype=np.float64))
    if np.any(np.linalg.eigvalsh(r) <= 0):
        raise DomainError("R must be positive definite")
    a_mat = np.array([[0.0, 1.0], [-k / m, -b / m]])
    b_mat = np.array([[0.0], [1.0 / m]])
    r_inv = np.linalg.inv(r)
    gain = np.zeros((1, 2))
    p = None
    for _ in range(200):
        a_cl = a_mat - b_mat @ gain
        p = solve_continuous_lyapunov(a_cl.T, -(q + gain.T @ r @ gain))
        gain_new = r_inv @ b_mat.T @ p
        residual = a_mat.T @ p + p @ a_mat - p @ b_mat @ r_inv @ b_mat.T @ p + q
        if np.abs(residual).max() <= 1e-10:
            return gain_new, p
        gain = gain_new
    raise DataError("Kleinman iteration did not reach the residual tolerance")
