"""Black-box TT approximation by adaptive cross sampling.

Builds a tensor train for a function known only through an oracle over
grid multi-indices, alternating left-to-right and right-to-left sweeps.
Each sweep assembles fiber matrices from the current row/column index
sets, picks interpolation pivots by maxvol, and rebuilds the cores so the
approximation matches the oracle exactly on the selected crosses. Ranks
start small and grow between sweeps while the validation error exceeds
the requested accuracy.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .tt import Grid, SolverConfig, TensorTrain


def maxvol(a, tol=1.05, max_iters=200):
    """Row indices of a tall matrix whose submatrix has near-maximal volume.

    LU partial pivoting seeds the index set; rank-1 swap updates refine it
    until no swap gains more than `tol` in |det|.
    """
    from scipy.linalg import lu_factor

    m, r = a.shape
    if m <= r:
        return np.arange(m, dtype=np.intp)
    try:
        _, ipiv = lu_factor(a, check_finite=False)
        perm = np.arange(m, dtype=np.intp)
        for i, p in enumerate(ipiv):
            perm[i], perm[p] = perm[p], perm[i]
        idx = perm[:r].copy()
    except ValueError:
        idx = np.arange(r, dtype=np.intp)
    try:
        b = np.linalg.solve(a[idx].T, a.T).T
    except np.linalg.LinAlgError:
        return idx
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= tol:
            break
        idx[j] = i
        bij = b[i, j]
        col = b[:, j].copy()
        row = b[i, :].copy()
        b -= np.outer(col, row) / bij
        b[:, j] = col / bij
    return idx


@dataclass
class CrossResult:
    """Outcome of a cross-approximation run."""

    tt: TensorTrain
    val_error: float
    n_sweeps: int
    converged: bool
    evals_per_sweep: list = field(default_factory=list)
    n_validation_evals: int = 0

    @property
    def total_evals(self):
        return self.n_validation_evals + int(sum(self.evals_per_sweep))


class _CountingOracle:
    """Finiteness-checked oracle wrapper that counts evaluations per sweep."""

    def __init__(self, oracle):
        self.oracle = oracle
        self.misses_this_sweep = 0
        self.total = 0

    def __call__(self, indices):
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        vals = np.asarray(self.oracle(indices), dtype=np.float64)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise DataError(f"oracle returned a non-finite value at index {tuple(indices[j])}")
        self.misses_this_sweep += len(indices)
        self.total += len(indices)
        return vals


def _fiber_indices(left, n, right):
    """All (left-row, node, right-row) multi-indices, ordered row-major."""
    rl, rr = left.shape[0], right.shape[0]
    mids = np.arange(n, dtype=np.int64)
    cols = []
    if left.shape[1]:
        cols.append(np.repeat(left, n * rr, axis=0))
    cols.append(np.tile(np.repeat(mids, rr), rl)[:, None])
    if right.shape[1]:
        cols.append(np.tile(right, (rl * n, 1)))
    return np.column_stack(cols)


def _interp_basis(c, target_rank):
    """Orthonormal column basis of c truncated to target_rank, with its rank."""
    u, s, _ = np.linalg.svd(c, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.ones((c.shape[0], 1)) / np.sqrt(c.shape[0]), 1
    effective = int(np.sum(s > 1e-12 * s[0]))
    rank = max(1, min(target_rank, effective))
    return u[:, :rank], rank


def _interp_core(q, piv):
    try:
        return q @ np.linalg.inv(q[piv])
    except np.linalg.LinAlgError:
        return q


def _random_right_sets(rng, shape, targets):
    d = len(shape)
    right = [None] * d
    right[d - 1] = np.zeros((1, 0), dtype=np.int64)
    for k in range(d - 1):
        cols = [rng.integers(0, shape[j], size=targets[k]) for j in range(k + 1, d)]
        right[k] = np.column_stack(cols).astype(np.int64)
    return right


def _right_sets_from_tt(tt):
    """Nested right index sets extracted from an existing TT (warm start)."""
    d = tt.ndim
    right = [None] * d
    right[d - 1] = np.zeros((1, 0), dtype=np.int64)
    sel = np.ones((1, 1))
    suffix = np.zeros((1, 0), dtype=np.int64)
    for k in range(d - 1, 0, -1):
        core = tt.cores[k]
        n_sel = sel.shape[1]
        w = np.einsum("inj,js->ins", core, sel).reshape(core.shape[0], -1)
        q, _ = np.linalg.qr(w.T)
        piv = maxvol(q) if q.shape[0] > q.shape[1] else np.arange(q.shape[0], dtype=np.intp)
        nodes = (piv // n_sel).astype(np.int64)
        tails = (piv % n_sel).astype(np.int64)
        new = np.column_stack([nodes[:, None], suffix[tails]]) if suffix.shape[1] else nodes[:, None]
        right[k - 1] = new.astype(np.int64)
        sel = w[:, piv]
        suffix = right[k - 1]
    return right


def cross_approximate(
    oracle,
    grid,
    cfg: SolverConfig,
    init=None,
    max_sweeps=10,
    n_validation=1000,
    verbose=True,
):
    """Rank-adaptive TT-cross. Returns a CrossResult with the best TT found."""
    shape = grid.shape
    d = len(shape)
    rng = np.random.default_rng(cfg.seed)
    memo = _CountingOracle(oracle)

    val_idx = np.column_stack([rng.integers(0, s, size=n_validation) for s in shape]).astype(np.int64)
    val_ref = memo(val_idx)
    memo.misses_this_sweep = 0
    n_validation_evals = n_validation
    val_rms = float(np.sqrt(np.mean(val_ref**2)))

    def val_error(tt):
        got = tt.element_batch(val_idx)
        err = float(np.sqrt(np.mean((got - val_ref) ** 2)))
        return err / val_rms if val_rms >= 1e-12 else err

    if d == 1:
        vals = memo(np.arange(shape[0], dtype=np.int64)[:, None])
        tt = TensorTrain([vals.reshape(1, -1, 1)], grid, validate=False)
        return CrossResult(tt, val_error(tt), 1, True, [memo.misses_this_sweep], n_validation_evals)

    bound = [min(int(np.prod(shape[: k + 1])), int(np.prod(shape[k + 1:])), cfg.r_max) for k in range(d - 1)]
    if init is not None:
        if init.grid != grid:
            raise DomainError("warm-start TT must live on the same grid")
        targets = [min(max(init.ranks[k + 1], 2), bound[k]) for k in range(d - 1)]
        right = _right_sets_from_tt(init)
    else:
        targets = [min(2, bound[k]) for k in range(d - 1)]
        right = _random_right_sets(rng, shape, targets)
    _enrich_sets(rng, shape, right, targets, side="right")

    cores = [None] * d
    best = None
    best_err = np.inf
    prev_err = None
    prev_grew = True
    converged = False
    evals_per_sweep = []
    n_sweeps = 0

    for sweep in range(1, max_sweeps + 1):
        n_sweeps = sweep
        memo.misses_this_sweep = 0

        # Left-to-right half sweep: rebuild cores 0..d-2, pick row sets.
        left = [np.zeros((1, 0), dtype=np.int64)] + [None] * (d - 1)
        for k in range(d - 1):
            idx = _fiber_indices(left[k], shape[k], right[k])
            c = memo(idx).reshape(left[k].shape[0] * shape[k], right[k].shape[0])
            q, rank = _interp_basis(c, targets[k])
            piv = maxvol(q) if q.shape[0] > q.shape[1] else np.arange(q.shape[0], dtype=np.intp)
            cores[k] = _interp_core(q, piv).reshape(left[k].shape[0], shape[k], -1)
            rows = (piv // shape[k]).astype(np.int64)
            nodes = (piv % shape[k]).astype(np.int64)
            sel = left[k][rows]
            left[k + 1] = np.column_stack([sel, nodes[:, None]]) if sel.shape[1] else nodes[:, None].astype(np.int64)
        idx = _fiber_indices(left[d - 1], shape[d - 1], np.zeros((1, 0), dtype=np.int64))
        cores[d - 1] = memo(idx).reshape(left[d - 1].shape[0], shape[d - 1], 1)

        tt = TensorTrain(list(cores), grid, validate=False)
        err = val_error(tt)
        if err < best_err:
            best, best_err = tt, err
        if verbose:
            print(f"sweep={sweep} rank_max={max(tt.ranks)} val_err={err:.3e}", file=sys.stderr)
        if err <= cfg.eps:
            converged = True
            evals_per_sweep.append(memo.misses_this_sweep)
            break

        # Extra random rows let the next half sweep see modes the current
        # pivots miss; the chain itself stays consistent (column counts of
        # the right-to-left fibers only).
        _enrich_sets(rng, shape, left, targets, side="left")

        # Right-to-left half sweep: rebuild cores d-1..1, pick column sets.
        for k in range(d - 1, 0, -1):
            idx = _fiber_indices(left[k], shape[k], right[k])
            c = memo(idx).reshape(left[k].shape[0], shape[k] * right[k].shape[0])
            q, rank = _interp_basis(c.T, targets[k - 1])
            piv = maxvol(q) if q.shape[0] > q.shape[1] else np.arange(q.shape[0], dtype=np.intp)
            cores[k] = _interp_core(q, piv).T.reshape(-1, shape[k], right[k].shape[0])
            nodes = (piv // max(right[k].shape[0], 1)).astype(np.int64)
            cols = (piv % max(right[k].shape[0], 1)).astype(np.int64)
            sel = right[k][cols]
            right[k - 1] = np.column_stack([nodes[:, None], sel]) if sel.shape[1] else nodes[:, None].astype(np.int64)
        idx = _fiber_indices(np.zeros((1, 0), dtype=np.int64), shape[0], right[0])
        cores[0] = memo(idx).reshape(1, shape[0], right[0].shape[0])

        tt = TensorTrain(list(cores), grid, validate=False)
        err = val_error(tt)
        evals_per_sweep.append(memo.misses_this_sweep)
        if err < best_err:
            best, best_err = tt, err
        if verbose:
            print(f"sweep={sweep} rank_max={max(tt.ranks)} val_err={err:.3e}", file=sys.stderr)
        if err <= cfg.eps:
            converged = True
            break
        # Stall: two successive sweeps changed the error by < 10% while rank
        # growth was already exhausted.
        if prev_err is not None and not prev_grew and abs(prev_err - err) < 0.1 * prev_err:
            break
        prev_err = err

        prev_grew = False
        for k in range(d - 1):
            new = min(min(2 * targets[k], targets[k] + 4), bound[k])
            prev_grew = prev_grew or new > targets[k]
            targets[k] = new
        _enrich_sets(rng, shape, right, targets, side="right")

    return CrossResult(best, best_err, n_sweeps, converged, evals_per_sweep, n_validation_evals)


def _enrich_sets(rng, shape, sets, targets, side):
    """Top up index sets to their target sizes plus a random oversample."""
    d = len(shape)
    for k in range(d - 1):
        pos = k if side == "right" else k + 1
        want = targets[k] + max(2, targets[k] // 4)
        cur = sets[pos]
        if cur is None or cur.shape[0] >= want:
            continue
        if side == "right":
            dims = range(k + 1, d)
        else:
            dims = range(0, k + 1)
        cols = [rng.integers(0, shape[j], size=want - cur.shape[0]) for j in dims]
        extra = np.column_stack(cols).astype(np.int64)
        sets[pos] = np.vstack([cur, extra])


def tt_cross(oracle, grid, cfg: SolverConfig, init=None, **kwargs):
    """Spec surface: TT approximation of an oracle; see cross_approximate."""
    return cross_approximate(oracle, grid, cfg, init=init, **kwargs).tt
