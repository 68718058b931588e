"""Parameter-augmented generalized policy iteration in TT format.

Each iteration cross-approximates the advantage A(alpha, x, u) from the
current value function, retrieves the greedy policy from it, and
cross-approximates the one-step backup of that policy into the next value
function. Both crosses are warm-started from the previous iteration.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cross import cross_approximate
from .errors import DomainError, SolverAbort
from .tt import SolverConfig, TensorTrain, tt_zero
from .ttgo import PolicyRetriever


@dataclass
class ValueModel:
    V: TensorTrain
    gamma: float
    n_param_dims: int
    iterations: int = 0
    history: list = field(default_factory=list)


@dataclass
class AdvantageModel:
    A: TensorTrain
    n_param_dims: int
    n_state_dims: int
    n_action_dims: int


def _clamp_to_grid(grid, n_param_dims, states):
    lo = grid.lower[n_param_dims:]
    hi = grid.upper[n_param_dims:]
    return np.clip(states, lo, hi)


def _points_from_indices(grid, indices):
    pts = np.empty(indices.shape, dtype=np.float64)
    for k in range(indices.shape[1]):
        pts[:, k] = grid.points[k][indices[:, k]]
    return pts


def _true_backup(env, value, grid, p, pts, actions):
    """R + gamma V(next) evaluated exactly for a (B, K, l) set of actions;
    returns the best value per point.

    Scoring the advantage model's top candidates against the true backup
    keeps the backup a max of exact values, so small argmax flips in the
    approximate advantage cannot dent it.
    """
    B, K, l = actions.shape
    alpha = np.repeat(pts[:, :p], K, axis=0)
    x = np.repeat(pts[:, p:], K, axis=0)
    u = actions.reshape(B * K, l)
    xn, reward, done = env.step_batch(alpha, x, u)
    xn = _clamp_to_grid(grid, p, xn)
    v_next = value.V.eval_batch(np.column_stack([alpha, xn]))
    backup = reward + value.gamma * np.where(done, 0.0, v_next)
    return backup.reshape(B, K).max(axis=1)


def bellman_backup(env, value: ValueModel, advantage, ax_indices, cfg=None,
                   policy_candidates=100, exhaustive_threshold=4096, seed=0,
                   top_k=8):
    """Greedy one-step backup R + gamma * V(next) at value-grid indices.

    The greedy action comes from the advantage model, with the top-k
    advantage candidates rescored by the exact backup; with advantage=None
    a uniform-random action per point is used instead (initial policy).
    Next states are clamped to the grid bounds before evaluating V.
    """
    ax_indices = np.asarray(ax_indices, dtype=np.int64)
    grid = value.V.grid
    pts = _points_from_indices(grid, ax_indices)
    p = value.n_param_dims
    if advantage is None:
        rng = np.random.default_rng(seed)
        lo, hi = np.array(env.spec.action_bounds).T
        u = rng.uniform(lo, hi, size=(len(pts), env.action_dim))
        xn, reward, done = env.step_batch(pts[:, :p], pts[:, p:], u)
        xn = _clamp_to_grid(grid, p, xn)
        v_next = value.V.eval_batch(np.column_stack([pts[:, :p], xn]))
        return reward + value.gamma * np.where(done, 0.0, v_next)
    retr = PolicyRetriever(
        advantage.A, p + env.state_dim, n_candidates=policy_candidates,
        refine=True, seed=seed, exhaustive_threshold=exhaustive_threshold,
    )
    actions, _ = retr.query_batch_topk(pts, top_k)
    return _true_backup(env, value, grid, p, pts, actions)


def build_advantage(env, value: ValueModel, grids, cfg: SolverConfig, init=None, verbose=True,
                    max_sweeps=10):
    """Cross-approximate A(alpha, x, u) = R + gamma (V(f) - V) on the advantage grid."""
    gamma = value.gamma
    p, m = grids.n_param_dims, grids.n_state_dims
    agrid = grids.adv_grid

    def oracle(indices):
        pts = _points_from_indices(agrid, indices)
        alpha, x, u = pts[:, :p], pts[:, p : p + m], pts[:, p + m :]
        xn, reward, done = env.step_batch(alpha, x, u)
        xn = _clamp_to_grid(value.V.grid, p, xn)
        v_next = value.V.eval_batch(np.column_stack([alpha, xn]))
        # fibers vary the action fastest, so (alpha, x) rows repeat heavily
        uniq, inverse = np.unique(indices[:, : p + m], axis=0, return_inverse=True)
        v_here = value.V.eval_batch(_points_from_indices(agrid, uniq))[inverse]
        return reward + gamma * (np.where(done, 0.0, v_next) - v_here)

    res = cross_approximate(oracle, agrid, cfg, init=init, verbose=verbose, max_sweeps=max_sweeps)
    return AdvantageModel(res.tt, p, m, grids.n_action_dims), res


def value_iteration(env, grids, cfg: SolverConfig, gamma, max_iters, tol_vi=1e-2,
                    n_change_samples=10_000, policy_candidates=24,
                    exhaustive_threshold=4096, verbose=True, warm_start=True,
                    cross_sweeps=3, backup_top_k=8, final_r_max=None):
    """Alternate advantage construction and greedy-backup cross until the
    sup-norm change estimate over random samples drops below tol_vi.

    Returns (ValueModel, AdvantageModel); raises SolverAbort if the change
    estimate grows five iterations in a row.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError("gamma must be in [0, 1)")
    vgrid = grids.value_grid
    p, m = grids.n_param_dims, grids.n_state_dims
    rng = np.random.default_rng(cfg.seed)
    change_idx = np.column_stack([rng.integers(0, n, size=n_change_samples) for n in vgrid.shape])

    value = ValueModel(tt_zero(vgrid), gamma, p)
    adv = None
    adv_res = None
    v_samples = value.V.element_batch(change_idx)
    prev_change = np.inf
    growth_streak = 0

    for it in range(1, max_iters + 1):
        adv, adv_res = build_advantage(
            env, value, grids, cfg, init=adv.A if (warm_start and adv) else None,
            verbose=verbose, max_sweeps=cross_sweeps,
        )
        retr = PolicyRetriever(
            adv.A, p + m, n_candidates=policy_candidates, refine=True,
            seed=cfg.seed + it, exhaustive_threshold=exhaustive_threshold,
        )

        def backup_oracle(indices):
            pts = _points_from_indices(vgrid, indices)
            actions, _ = retr.query_batch_topk(pts, backup_top_k)
            return _true_backup(env, value, vgrid, p, pts, actions)

        v_res = cross_approximate(
            backup_oracle, vgrid, cfg, init=value.V if warm_start else None,
            verbose=verbose, max_sweeps=cross_sweeps,
        )
        new_samples = v_res.tt.element_batch(change_idx)
        change = float(np.abs(new_samples - v_samples).max())
        vrange = float(new_samples.max() - new_samples.min())
        scale = max(vrange, float(np.abs(new_samples).max()), 1e-30)
        rel_change = change / scale
        value = ValueModel(v_res.tt, gamma, p, it, value.history)
        value.history.append(
            {
                "iteration": it,
                "change": change,
                "rel_change": rel_change,
                "mean_value": float(new_samples.mean()),
                "value_cross_err": v_res.val_error,
                "advantage_cross_err": adv_res.val_error,
                "rank_max": max(v_res.tt.ranks),
            }
        )
        if verbose:
            print(
                f"vi iter={it} change={change:.4e} rel={rel_change:.4e} "
                f"rank={max(v_res.tt.ranks)}",
                file=sys.stderr,
            )
        v_samples = new_samples
        # Early iterations legitimately plateau (the discounted tail shrinks
        # slowly), so only meaningful growth counts toward divergence.
        if change > 1.1 * prev_change:
            growth_streak += 1
            if growth_streak >= 5:
                raise SolverAbort(
                    f"value iteration diverging: change estimate grew 5 consecutive "
                    f"iterations (last={change:.3e}) at iteration {it}"
                )
        else:
            growth_streak = 0
        prev_change = change
        if rel_change < tol_vi:
            break

    # The per-iteration advantage only steers policy retrieval; the one
    # handed to callers (contraction, deployment) gets a fuller rank budget.
    final_cfg = SolverConfig(eps=cfg.eps, r_max=final_r_max or 2 * cfg.r_max, seed=cfg.seed)
    adv, _ = build_advantage(
        env, value, grids, final_cfg, init=adv.A if (warm_start and adv) else None,
        verbose=verbose, max_sweeps=10,
    )
    return value, adv


# ----------------------------------------------------------------------
# Model files: TT binaries plus a key=value sidecar
# ----------------------------------------------------------------------


def save_models(path_prefix, value: ValueModel, advantage: AdvantageModel, extra=None):
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    value.V.save(f"{prefix}_V.ttm")
    advantage.A.save(f"{prefix}_A.ttm")
    meta = {
        "gamma": repr(value.gamma),
        "iterations": str(value.iterations),
        "n_param_dims": str(advantage.n_param_dims),
        "n_state_dims": str(advantage.n_state_dims),
        "n_action_dims": str(advantage.n_action_dims),
    }
    meta.update({k: str(v) for k, v in (extra or {}).items()})
    lines = [f"{k}={v}" for k, v in meta.items()]
    Path(f"{prefix}.meta").write_text("\n".join(lines) + "\n")


def load_models(path_prefix):
    prefix = Path(path_prefix)
    for suffix in ("_V.ttm", "_A.ttm", ".meta"):
        if not Path(f"{prefix}{suffix}").exists():
            raise FileNotFoundError(f"missing model artifact {prefix}{suffix}")
    meta = {}
    for line in Path(f"{prefix}.meta").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k] = v
    v_tt = TensorTrain.load(f"{prefix}_V.ttm")
    a_tt = TensorTrain.load(f"{prefix}_A.ttm")
    p = int(meta["n_param_dims"])
    value = ValueModel(v_tt, float(meta["gamma"]), p, int(meta.get("iterations", 0)))
    advantage = AdvantageModel(a_tt, p, int(meta["n_state_dims"]), int(meta["n_action_dims"]))
    return value, advantage, meta
