"""Experiment orchestration: training runs, evaluation sweeps, motor-
adaptation comparisons, contraction benchmarks, sensitivity scans.

Configs are flat key=value text files; every command is reproducible from
(config, seed) alone and writes UTF-8 CSV with a header row.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .adaptation import (
    ProprioHistory,
    collect_dataset,
    ema_pointwise,
    estimate,
    ima_distribution,
    train_regressor,
)
from .adp import load_models, save_models, value_iteration
from .contraction import (
    contract,
    contract_function_level,
    dist_uniform,
    dist_uniform_band,
    parse_dist_literal,
)
from .envs import env_grids, make_env, rollout
from .errors import ConfigError
from .tt import SolverConfig
from .ttgo import PolicyRetriever

EVAL_EXHAUSTIVE_THRESHOLD = 65_536


@dataclass
class ExperimentConfig:
    env: str = "hit"
    nodes_param: int = 10
    nodes_state: int = 20
    nodes_action: int = 15
    eps: float = 1e-3
    r_max: int = 100
    seed: int = 0
    gamma: float = 0.99
    horizon: int = 0  # 0: environment default
    max_iters: int = 40
    tol_vi: float = 1e-2
    cross_sweeps: int = 3
    seeds: list = field(default_factory=list)
    n_instances: int = 10
    w_list: list = field(default_factory=lambda: ["1", "N/20", "N/5", "N"])
    bandwidth: str = "N/5"
    dist: str = ""
    out_dir: str = "out"
    hist_window: int = 10
    n_rollouts_dataset: int = 200
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 256
    oracle_estimator: bool = False
    trials: int = 20
    bench_points: int = 200
    rank_list: list = field(default_factory=lambda: [20, 100])
    node_list: list = field(default_factory=lambda: [2, 8, 50])
    sensitivity_iters: int = 0  # 0: use max_iters
    workers: int = 1
    policy_candidates: int = 24

    def solver(self, r_max=None):
        return SolverConfig(eps=self.eps, r_max=r_max or self.r_max, seed=self.seed)

    def instance_seeds(self):
        return list(self.seeds) if self.seeds else list(range(self.n_instances))


_ENV_DEFAULTS = {
    "spring": dict(nodes_param=4, nodes_state=41, nodes_action=81, gamma=0.995,
                   eps=2e-3, r_max=20, max_iters=350, tol_vi=2e-4, bandwidth="N/2",
                   w_list=["1", "N/4", "N/2", "N"], hist_window=10),
    "hit": dict(nodes_param=20, nodes_state=15, nodes_action=281, gamma=0.99,
                eps=2e-4, r_max=90, max_iters=1, bandwidth="N/20"),
    "push": dict(nodes_param=10, nodes_state=20, nodes_action=15, gamma=0.99,
                 eps=1e-3, r_max=14, max_iters=40, bandwidth="N/5",
                 policy_candidates=16),
    "reorient": dict(nodes_param=8, nodes_state=25, nodes_action=15, gamma=0.99,
                     eps=1e-3, r_max=20, max_iters=60, bandwidth="N/5"),
}


def default_config(env_name, **overrides):
    base = dict(_ENV_DEFAULTS.get(env_name, {}))
    base["env"] = env_name
    base.update(overrides)
    return ExperimentConfig(**base)


_LIST_INT = {"seeds", "rank_list"}
_LIST_MIXED = {"node_list"}
_LIST_STR = {"w_list"}
_BOOL = {"oracle_estimator"}


def parse_config_text(text):
    """Flat key=value lines, '#' comments; unknown keys are a ConfigError."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    env_name = values.pop("env", "hit")
    return default_config(env_name, **values)


def _parse_value(key, val):
    if key in _LIST_STR:
        return [t.strip() for t in val.split(",") if t.strip()]
    if key in _LIST_INT:
        return [int(t) for t in val.split(",") if t.strip()]
    if key in _LIST_MIXED:
        return [int(t) for t in val.split(",") if t.strip()]
    if key in _BOOL:
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(val)
    current = getattr(ExperimentConfig(), key)
    if isinstance(current, bool):
        return val.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(val)
    if isinstance(current, float):
        return float(val)
    return val


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


@dataclass
class MetricsRow:
    env: str
    method: str
    w: str
    seed: int
    final_state_error: float
    cumulative_reward: float
    normalized_reward: float
    wall_time_s: float


METRICS_HEADER = ["env", "method", "w", "seed", "final_state_error",
                  "cumulative_reward", "normalized_reward", "wall_time_s"]


def write_metrics_csv(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r.env, r.method, r.w, r.seed,
                             repr(r.final_state_error), repr(r.cumulative_reward),
                             repr(r.normalized_reward), repr(r.wall_time_s)])


# ----------------------------------------------------------------------
# Bandwidth tokens: index units per dimension ("1", "N/20", "N/5", "N" or
# a plain number), translated to physical widths via the grid spacing.
# ----------------------------------------------------------------------


def w_token_to_widths(token, grid):
    token = token.strip()
    widths = np.empty(grid.ndim)
    for k in range(grid.ndim):
        n = grid.shape[k]
        if token == "N":
            units = float(n)
        elif token.startswith("N/"):
            units = n / float(token[2:])
        else:
            units = float(token)
        units = max(units, 1.0)
        h = grid.spacing(k) if n > 1 else 1.0
        widths[k] = units * h
    return widths


def method_label(token):
    token = token.strip()
    if token == "1":
        return "DA"
    if token == "N":
        return "DR"
    return "DC"


def distribution_for_w(token, alpha_true, grid, rng=None):
    """Bandwidth-w estimate containing the true parameters.

    A width-w window models an estimate accurate to within w: the truth lies
    uniformly anywhere inside it, so the window center is the truth plus a
    uniform offset up to (w - cell)/2 per dimension. w = one cell collapses
    to the exact-parameter (DA) case and w = N to pure randomization (DR).
    """
    if token.strip() == "N":
        return dist_uniform(grid)  # no prior knowledge: pure domain randomization
    widths = w_token_to_widths(token, grid)
    center = np.asarray(alpha_true, dtype=np.float64).copy()
    if rng is not None:
        for k in range(grid.ndim):
            h = grid.spacing(k) if grid.shape[k] > 1 else widths[k]
            slack = max(widths[k] - h, 0.0) / 2.0
            center[k] += rng.uniform(-slack, slack)
    return dist_uniform_band(center, widths, grid)


def normalized_reward(da_reward, method_reward):
    """Fraction of the parameter-exact performance achieved (DA = 1.0).

    Rewards are non-positive, so the ratio is DA/method; a method matching
    DA scores 1 and worse methods decay toward 0.
    """
    if abs(method_reward) <= 1e-12:
        return 1.0 if abs(da_reward) <= 1e-12 else float("inf")
    return da_reward / method_reward


def greedy_policy(a_xu, n_state_dims, seed=0, n_candidates=100,
                  exhaustive_threshold=EVAL_EXHAUSTIVE_THRESHOLD):
    """State -> action callable from a contracted advantage TT."""
    retr = PolicyRetriever(a_xu, n_state_dims, n_candidates=n_candidates,
                           refine=True, seed=seed,
                           exhaustive_threshold=exhaustive_threshold)
    lo = a_xu.grid.lower[:n_state_dims]
    hi = a_xu.grid.upper[:n_state_dims]

    def policy(x):
        u, _ = retr.query(np.clip(x, lo, hi))
        return u

    return policy


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------


def model_prefix(config):
    return Path(config.out_dir) / config.env


def cmd_train(config, verbose=True):
    """Run value iteration and write the V/A model files plus a report."""
    env = make_env(config.env)
    grids = env_grids(env, config.nodes_param, config.nodes_state, config.nodes_action)
    cfg = config.solver()
    t0 = time.time()
    value, adv = value_iteration(
        env, grids, cfg, config.gamma, config.max_iters, tol_vi=config.tol_vi,
        policy_candidates=config.policy_candidates, verbose=verbose,
        cross_sweeps=config.cross_sweeps,
    )
    wall = time.time() - t0
    prefix = model_prefix(config)
    save_models(prefix, value, adv, extra={
        "env": config.env, "eps": config.eps, "r_max": config.r_max,
        "seed": config.seed, "nodes_param": config.nodes_param,
        "nodes_state": config.nodes_state, "nodes_action": config.nodes_action,
        "gamma": config.gamma, "wall_time_s": round(wall, 3),
    })
    report = Path(f"{prefix}_train_report.csv")
    with open(report, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "change", "rel_change", "mean_value",
                         "value_cross_err", "advantage_cross_err", "rank_max"])
        for h in value.history:
            writer.writerow([h["iteration"], repr(h["change"]), repr(h["rel_change"]),
                             repr(h["mean_value"]), repr(h["value_cross_err"]),
                             repr(h["advantage_cross_err"]), h["rank_max"]])
    return prefix


# ----------------------------------------------------------------------
# eval: DA / DC / DR sweep over bandwidths, distributions centered on the
# true parameters
# ----------------------------------------------------------------------


def _instance(env, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    return env.sample_instance(rng)


def _eval_cell(env, adv, alpha, x0, token, horizon, seed):
    pgrid = adv.A.grid.subgrid(0, adv.n_param_dims)
    t0 = time.time()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0FF5E7] + list(token.encode())))
    dist = distribution_for_w(token, alpha, pgrid, rng=rng)
    a_xu = contract(adv, dist)
    policy = greedy_policy(a_xu, adv.n_state_dims, seed=seed)
    traj = rollout(env, alpha, policy, x0, horizon=horizon)
    wall = time.time() - t0
    return traj.final_error(), traj.cumulative_reward, wall


def _eval_seed_block(args):
    env_name, adv, tokens, extra_literal, horizon, seed = args
    env = make_env(env_name)
    alpha, x0 = _instance(env, seed)
    da_err, da_reward, da_wall = _eval_cell(env, adv, alpha, x0, "1", horizon, seed)
    rows = []
    for token in tokens:
        if token == "1":
            err, reward, wall = da_err, da_reward, da_wall
        else:
            err, reward, wall = _eval_cell(env, adv, alpha, x0, token, horizon, seed)
        rows.append(MetricsRow(env_name, method_label(token), token, seed, err,
                               reward, normalized_reward(da_reward, reward), wall))
    if extra_literal:
        pgrid = adv.A.grid.subgrid(0, adv.n_param_dims)
        dist = parse_dist_literal(extra_literal.split(";"), pgrid)
        t0 = time.time()
        a_xu = contract(adv, dist)
        policy = greedy_policy(a_xu, adv.n_state_dims, seed=seed)
        traj = rollout(env, alpha, policy, x0, horizon=horizon)
        rows.append(MetricsRow(env_name, "DC", "literal", seed, traj.final_error(),
                               traj.cumulative_reward,
                               normalized_reward(da_reward, traj.cumulative_reward),
                               time.time() - t0))
    return rows


def cmd_eval(config, w_list=None):
    _, adv, _ = load_models(model_prefix(config))
    tokens = w_list if w_list is not None else config.w_list
    horizon = config.horizon or None
    tasks = [(config.env, adv, tokens, config.dist, horizon, seed)
             for seed in config.instance_seeds()]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            blocks = list(pool.map(_eval_seed_block, tasks))
    else:
        blocks = [_eval_seed_block(t) for t in tasks]
    rows = [row for block in blocks for row in block]
    out = Path(config.out_dir) / f"{config.env}_eval.csv"
    write_metrics_csv(out, rows)
    return rows, out


# ----------------------------------------------------------------------
# compare-ma: explicit vs implicit motor adaptation with a trained
# estimator
# ----------------------------------------------------------------------


class OnlineAdaptivePolicy:
    """Per-step estimate -> distribution -> contraction -> greedy action."""

    def __init__(self, env, adv, regressor, mode, bandwidth_token, window, seed,
                 oracle_alpha=None):
        self.env = env
        self.adv = adv
        self.regressor = regressor
        self.mode = mode
        self.window = window
        self.seed = seed
        self.oracle_alpha = oracle_alpha
        self.pgrid = adv.A.grid.subgrid(0, adv.n_param_dims)
        self.widths = w_token_to_widths(bandwidth_token, self.pgrid)
        self.states = []
        self.actions = []
        self.t = 0
        lo, hi = np.array(env.spec.param_bounds).T
        self.prior = 0.5 * (lo + hi)
        self.estimates = []

    def current_estimate(self):
        if self.oracle_alpha is not None:
            return np.asarray(self.oracle_alpha, dtype=np.float64)
        if self.t == 0:
            return self.prior.copy()
        h = ProprioHistory.from_steps(self.states, self.actions, self.t, self.window,
                                      self.env.state_dim, self.env.action_dim)
        return estimate(self.regressor, h)

    def __call__(self, x):
        nu = self.current_estimate()
        self.estimates.append(nu)
        if self.mode == "IMA":
            dist = ima_distribution(nu, self.widths, self.pgrid)
        else:
            dist = ema_pointwise(nu, self.pgrid)
        a_xu = contract(self.adv, dist)
        policy = greedy_policy(a_xu, self.adv.n_state_dims, seed=self.seed)
        u = policy(x)
        self.states.append(np.asarray(x, dtype=np.float64).copy())
        self.actions.append(np.asarray(u, dtype=np.float64).copy())
        self.t += 1
        return u


def _hit_adaptive_episode(env, adv, regressor, mode, bandwidth_token, window, seed,
                          alpha, x0, oracle_alpha=None):
    """Blind first attempt, estimate from its slide, adapted second attempt."""
    from .adaptation import _hit_slide_positions

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77E]))
    lo, hi = np.array(env.spec.action_bounds).T
    u0 = rng.uniform(lo, hi)
    positions = _hit_slide_positions(env, alpha, x0, u0, window)
    width = env.state_dim + env.action_dim
    hist = np.zeros(window * width)
    for j in range(window):
        hist[j * width : j * width + env.state_dim] = positions[j]
        hist[j * width + env.state_dim :(j + 1) * width] = u0
    nu = np.asarray(oracle_alpha, dtype=np.float64) if oracle_alpha is not None \
        else estimate(regressor, hist)
    pgrid = adv.A.grid.subgrid(0, adv.n_param_dims)
    widths = w_token_to_widths(bandwidth_token, pgrid)
    dist = ima_distribution(nu, widths, pgrid) if mode == "IMA" else ema_pointwise(nu, pgrid)
    a_xu = contract(adv, dist)
    policy = greedy_policy(a_xu, adv.n_state_dims, seed=seed)
    traj = rollout(env, alpha, policy, x0)
    return traj, traj.actions[0]


def cmd_compare_ma(config, regressor=None, dataset=None):
    env = make_env(config.env)
    _, adv, _ = load_models(model_prefix(config))
    out_dir = Path(config.out_dir)
    if regressor is None and not config.oracle_estimator:
        if dataset is None:
            dataset = collect_dataset(env, adv, config.n_rollouts_dataset,
                                      config.hist_window, config.seed,
                                      horizon=config.horizon or None)
            dataset.save_csv(out_dir / f"{config.env}_dataset.csv")
        regressor, report = train_regressor(dataset, epochs=config.epochs,
                                            learning_rate=config.learning_rate,
                                            seed=config.seed,
                                            batch_size=config.batch_size)
        regressor.save(out_dir / f"{config.env}_regressor.bin")
    bandwidth = config.bandwidth
    window = config.hist_window
    horizon = config.horizon or None
    rows = []
    records = []
    for seed in config.instance_seeds():
        alpha, x0 = _instance(env, seed)
        for mode in ("EMA", "IMA"):
            oracle_alpha = alpha if config.oracle_estimator else None
            t0 = time.time()
            if env.spec.one_shot:
                traj, impulse = _hit_adaptive_episode(
                    env, adv, regressor, mode, bandwidth, window, seed, alpha, x0,
                    oracle_alpha=oracle_alpha)
                u_rec = impulse
            else:
                policy = OnlineAdaptivePolicy(env, adv, regressor, mode, bandwidth,
                                              window, seed, oracle_alpha=oracle_alpha)
                traj = rollout(env, alpha, policy, x0, horizon=horizon)
                u_rec = traj.actions[0]
            wall = time.time() - t0
            rows.append(MetricsRow(config.env, mode, bandwidth if mode == "IMA" else "1",
                                   seed, traj.final_error(), traj.cumulative_reward,
                                   float("nan"), wall))
            records.append((rows[-1], u_rec if env.spec.one_shot else None))
    out = out_dir / f"{config.env}_compare_ma.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = METRICS_HEADER + ([f"u{k}" for k in range(env.action_dim)]
                                   if env.spec.one_shot else [])
        writer.writerow(header)
        for row, impulse in records:
            line = [row.env, row.method, row.w, row.seed, repr(row.final_state_error),
                    repr(row.cumulative_reward), "", repr(row.wall_time_s)]
            if impulse is not None:
                line += [repr(float(v)) for v in impulse]
            writer.writerow(line)
    return rows, out


# ----------------------------------------------------------------------
# bench-contraction: core-level vs function-level timing
# ----------------------------------------------------------------------


def cmd_bench_contraction(config):
    env = make_env(config.env)
    _, adv, _ = load_models(model_prefix(config))
    pgrid = adv.A.grid.subgrid(0, adv.n_param_dims)
    xu_grid = adv.A.grid.subgrid(adv.n_param_dims)
    rng = np.random.default_rng(config.seed)
    rows = []
    for trial in range(max(config.trials, 20)):
        alpha = env.sample_alpha(rng)
        dist = distribution_for_w(config.bandwidth, alpha, pgrid)
        points = np.column_stack([
            rng.uniform(xu_grid.points[k][0], xu_grid.points[k][-1], config.bench_points)
            for k in range(xu_grid.ndim)
        ])
        t0 = time.perf_counter()
        a_xu = contract(adv, dist)
        core_vals = a_xu.eval_batch(points)
        t1 = time.perf_counter()
        func_vals = contract_function_level(adv, dist, points)
        t2 = time.perf_counter()
        scale = max(np.abs(func_vals).max(), 1e-12)
        agreement = float(np.abs(core_vals - func_vals).max() / scale)
        rows.append({"env": config.env, "trial": trial, "core_s": t1 - t0,
                     "function_s": t2 - t1, "speedup": (t2 - t1) / max(t1 - t0, 1e-12),
                     "max_rel_disagreement": agreement})
    out = Path(config.out_dir) / f"{config.env}_bench.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    core = np.array([r["core_s"] for r in rows])
    func = np.array([r["function_s"] for r in rows])
    summary = {
        "core_mean_s": float(core.mean()), "core_std_s": float(core.std()),
        "function_mean_s": float(func.mean()), "function_std_s": float(func.std()),
        "speedup": float(func.mean() / core.mean()),
    }
    return rows, summary, out


# ----------------------------------------------------------------------
# sensitivity: re-train per (r_max, node count) setting
# ----------------------------------------------------------------------


def _sensitivity_setting(config, kind, value):
    if kind == "rank":
        return replace(config, r_max=int(value))
    return replace(config, nodes_state=int(value), nodes_action=int(value))


def _da_errors(env, adv, seeds, horizon):
    errs = []
    for seed in seeds:
        alpha, x0 = _instance(env, seed)
        err, _, _ = _eval_cell(env, adv, alpha, x0, "1", horizon, seed)
        errs.append(err)
    return float(np.mean(errs))


def cmd_sensitivity(config, rank_list=None, node_list=None, verbose=False):
    env = make_env(config.env)
    rank_list = rank_list if rank_list is not None else config.rank_list
    node_list = node_list if node_list is not None else config.node_list
    iters = config.sensitivity_iters or config.max_iters
    settings = [("rank", r) for r in rank_list] + [("nodes", n) for n in node_list]
    horizon = config.horizon or None
    results = []
    for kind, value in settings:
        sub = _sensitivity_setting(config, kind, value)
        grids = env_grids(env, sub.nodes_param, sub.nodes_state, sub.nodes_action)
        cfg = sub.solver()
        t0 = time.time()
        _, adv = value_iteration(env, grids, cfg, sub.gamma, iters, tol_vi=sub.tol_vi,
                                 policy_candidates=sub.policy_candidates,
                                 verbose=verbose, cross_sweeps=sub.cross_sweeps)
        err = _da_errors(env, adv, config.instance_seeds(), horizon)
        results.append({"env": config.env, "kind": kind, "value": value,
                        "mean_final_error": err, "wall_time_s": time.time() - t0})
    worst = max(r["mean_final_error"] for r in results) or 1.0
    for r in results:
        r["normalized_error"] = r["mean_final_error"] / worst
    out = Path(config.out_dir) / f"{config.env}_sensitivity.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        names = ["env", "kind", "value", "mean_final_error", "normalized_error", "wall_time_s"]
        writer = csv.DictWriter(f, fieldnames=names)
        writer.writeheader()
        for r in results:
            writer.writerow({k: r[k] for k in names})
    return results, out


# ----------------------------------------------------------------------
# spring-demo: ARE ground-truth comparison plus IMA vs biased-EMA rollout
# ----------------------------------------------------------------------


def settle_step(positions, threshold=0.05):
    """First step from which |position| stays below the threshold; None if never."""
    below = np.abs(positions) < threshold
    if not below[-1]:
        return None
    idx = np.flatnonzero(~below)
    return 0 if idx.size == 0 else int(idx[-1] + 1)


def cmd_spring_demo(config=None, verbose=True):
    from .envs import are_oracle

    config = config or default_config("spring")
    env = make_env("spring")
    prefix = model_prefix(config)
    try:
        value, adv, _ = load_models(prefix)
    except FileNotFoundError:
        cmd_train(config, verbose=verbose)
        value, adv, _ = load_models(prefix)

    # value-surface comparison against the Riccati oracle at a grid-node alpha
    pgrid = adv.A.grid.subgrid(0, 3)
    alpha_node = np.array([pgrid.points[0][0], pgrid.points[1][-1], pgrid.points[2][2]])
    _, p_mat = are_oracle(alpha_node)
    rng = np.random.default_rng(config.seed + 17)
    states = rng.uniform(-1, 1, size=(1000, 2)) * np.array([1.5, 2.0])
    pts = np.column_stack([np.tile(alpha_node, (1000, 1)), states])
    v_tt = value.V.eval_batch(pts)
    v_are = -np.einsum("bi,ij,bj->b", states, p_mat, states)
    scale = float((v_are @ v_tt) / (v_are @ v_are))
    rel_err = float(np.linalg.norm(v_tt - scale * v_are) / np.linalg.norm(v_tt))

    # closed-loop comparison under a deliberately biased estimate nu = 1.3 alpha
    alpha_true = np.array([1.0, 4.0, 0.8])
    nu = env.clamp_alpha(1.3 * alpha_true)
    x0 = np.array([1.0, 0.0])
    widths = w_token_to_widths(config.bandwidth, pgrid)
    ima = contract(adv, dist_uniform_band(nu, widths, pgrid))
    ema = contract(adv, ema_pointwise(nu, pgrid))
    results = {}
    for name, a_xu in (("IMA", ima), ("EMA", ema)):
        policy = greedy_policy(a_xu, 2, seed=config.seed)
        traj = rollout(env, alpha_true, policy, x0, horizon=400)
        pos = np.append(traj.states[:, 0], traj.final_state[0])
        results[name] = settle_step(pos)
    summary = {
        "are_alpha": alpha_node.tolist(), "are_scale": scale, "are_rel_err": rel_err,
        "settle_ima": results["IMA"], "settle_ema": results["EMA"],
    }
    out = Path(config.out_dir) / "spring_demo.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["quantity", "value"])
        for k, v in summary.items():
            writer.writerow([k, v])
    if verbose:
        print(f"spring-demo: ARE rel err {rel_err:.4f} (scale {scale:.3f}); "
              f"settle IMA={results['IMA']} EMA={results['EMA']}")
    return summary, out
