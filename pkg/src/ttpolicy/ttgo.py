"""Gradient-free global maximization and prioritized sampling in TT format.

Candidates are generated dimension-by-dimension: the squared TT acts as an
unnormalized density whose partial masses are computable exactly from
suffix Gram matrices of the cores, so promising multi-indices are drawn
without ever materializing the full tensor. For maximization the tensor is
first shifted by an estimated lower bound so that squaring preserves the
argmax, and candidates are optionally polished by coordinate ascent over
grid neighbors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .tt import TensorTrain, tt_add, tt_const

_DEFAULT_CANDIDATES = 100
_EXHAUSTIVE_THRESHOLD = 4096
_PROBE_COUNT = 10_000


@dataclass
class OptimizeReport:
    best_index: tuple
    best_point: np.ndarray
    best_value: float
    candidates_evaluated: int


def _suffix_grams(cores):
    """M[k] = sum over suffix indices of P P^T for the partial products P."""
    d = len(cores)
    grams = [None] * (d + 1)
    grams[d] = np.ones((1, 1))
    for k in range(d - 1, -1, -1):
        grams[k] = np.einsum("anj,jk,bnk->ab", cores[k], grams[k + 1], cores[k])
    return grams


def _conditional_sample(cores, grams, rows, rng, temperature, greedy):
    """Draw one multi-index per starting row vector, dimension by dimension.

    rows has shape (S, r_0). Probability of node j at dimension k is
    proportional to (v G_j M_{k+1} G_j^T v^T)^(1/temperature) given the
    running prefix vector v. Rows whose mass vanishes fall back to uniform.
    """
    S = rows.shape[0]
    d = len(cores)
    out = np.empty((S, d), dtype=np.int64)
    v = rows.copy()
    zero_rows = False
    for k in range(d):
        w = np.einsum("sa,anb->snb", v, cores[k], optimize=True)
        mass = np.einsum("snb,bc,snc->sn", w, grams[k + 1], w, optimize=True)
        mass = np.maximum(mass, 0.0)
        peak = mass.max(axis=1, keepdims=True)
        dead = peak[:, 0] <= 0.0
        if np.any(dead):
            zero_rows = True
            mass[dead] = 1.0
            peak[dead] = 1.0
        if greedy:
            choice = np.argmax(mass, axis=1)
        else:
            p = mass / peak
            if temperature != 1.0:
                p = p ** (1.0 / temperature)
            csum = np.cumsum(p, axis=1)
            u = rng.random(S) * csum[:, -1]
            choice = np.minimum((csum < u[:, None]).sum(axis=1), mass.shape[1] - 1)
        out[:, k] = choice
        v = w[np.arange(S), choice]
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        v = np.where(norm > 0, v / np.maximum(norm, 1e-300), v)
    return out, zero_rows


def _beam_select(cores, grams, width, prefix_rows=None):
    """Top-`width` multi-indices by exact partial mass of the squared TT.

    Exact marginal mass of a prefix is v M_{k+1} v^T for its running product
    vector v, so the beam prunes on true mass, not a heuristic. prefix_rows
    optionally seeds the chain (used when leading dims were already fixed).
    """
    d = len(cores)
    v = prefix_rows if prefix_rows is not None else np.ones((1, 1))
    idx = np.zeros((v.shape[0], 0), dtype=np.int64)
    group = np.arange(v.shape[0])  # which starting row each beam entry belongs to
    per_group = prefix_rows is not None and prefix_rows.shape[0] > 1
    for k in range(d):
        w = np.einsum("sa,anb->snb", v, cores[k], optimize=True)
        scores = np.einsum("snb,bc,snc->sn", w, grams[k + 1], w, optimize=True)
        n = scores.shape[1]
        if per_group:
            # keep the top entries within each starting row independently
            keep_rows, keep_nodes = [], []
            for g in np.unique(group):
                rows = np.flatnonzero(group == g)
                flat = scores[rows].ravel()
                m = min(width, flat.size)
                top = np.argpartition(-flat, m - 1)[:m]
                keep_rows.append(rows[top // n])
                keep_nodes.append(top % n)
            rows = np.concatenate(keep_rows)
            nodes = np.concatenate(keep_nodes)
        else:
            flat = scores.ravel()
            m = min(width, flat.size)
            top = np.argpartition(-flat, m - 1)[:m]
            rows, nodes = top // n, top % n
        idx = np.column_stack([idx[rows], nodes])
        group = group[rows]
        v = w[rows, nodes]
        peak = np.abs(v).max()
        if peak > 0:
            v = v / peak  # uniform rescale keeps masses comparable
    return idx, group


def _shifted_density(tt, rng):
    """TT shifted below its (estimated) minimum so squaring preserves argmax.

    Returns None for constant tensors, where sampling degrades to uniform.
    """
    probes = np.column_stack([rng.integers(0, n, size=_PROBE_COUNT) for n in tt.shape])
    vals = tt.element_batch(probes)
    vmin, vmax = float(vals.min()), float(vals.max())
    margin = 0.01 * (vmax - vmin)
    if margin <= 0.0:
        return None
    return tt_add(tt, tt_const(tt.grid, margin - vmin))


def _ascent_steps(shape):
    """Symmetric step sizes 1, 2, 4, ... up to half the largest dimension."""
    steps = [1]
    while steps[-1] * 2 <= max(shape) // 2:
        steps.append(steps[-1] * 2)
    out = []
    for s in steps:
        out.extend((s, -s))
    return out


def _coordinate_ascent(tt, idx, vals):
    """Batched multi-scale ascent over grid neighbors; returns evals performed."""
    shape = tt.shape
    steps = _ascent_steps(shape)
    evals = 0
    improved = True
    while improved:
        improved = False
        for k in range(len(shape)):
            for delta in steps:
                cand = idx.copy()
                cand[:, k] += delta
                ok = (cand[:, k] >= 0) & (cand[:, k] < shape[k])
                if not np.any(ok):
                    continue
                full = np.full(len(idx), -np.inf)
                full[ok] = tt.element_batch(cand[ok])
                evals += int(ok.sum())
                better = full > vals
                if np.any(better):
                    idx[better] = cand[better]
                    vals[better] = full[better]
                    improved = True
    return idx, vals, evals


def _pick_best(idx, vals):
    """Highest value; exact ties broken by lowest lexicographic index."""
    order = np.lexsort(tuple(idx[:, k] for k in range(idx.shape[1] - 1, -1, -1)) + (-vals,))
    return order[0]


def ttgo_argmax(tt, n_candidates=_DEFAULT_CANDIDATES, refine=True, seed=0):
    """Best grid point among prioritized candidates drawn through the cores."""
    rng = np.random.default_rng(seed)
    density = _shifted_density(tt, rng)
    if density is None:
        cand = np.column_stack([rng.integers(0, n, size=n_candidates) for n in tt.shape])
    else:
        grams = _suffix_grams(density.cores)
        beam, _ = _beam_select(density.cores, grams, n_candidates)
        rev_cores = [np.ascontiguousarray(c.transpose(2, 1, 0)) for c in density.cores[::-1]]
        rev_beam, _ = _beam_select(rev_cores, _suffix_grams(rev_cores), n_candidates)
        cand = np.vstack([beam, rev_beam[:, ::-1]])
        if n_candidates > 1:
            sampled, _ = _conditional_sample(
                density.cores, grams, np.ones((n_candidates, 1)), rng, 1.0, False
            )
            cand = np.vstack([cand, sampled])
    cand = np.unique(cand, axis=0)
    vals = tt.element_batch(cand)
    evals = len(cand)
    if refine:
        cand, vals, extra = _coordinate_ascent(tt, cand, vals)
        evals += extra
    best = _pick_best(cand, vals)
    index = tuple(int(i) for i in cand[best])
    point = np.array([tt.grid.points[k][i] for k, i in enumerate(index)])
    return OptimizeReport(index, point, float(vals[best]), evals)


def ttgo_sample(tt, n, temperature=1.0, seed=0):
    """Draw n multi-indices with probability ~ (squared-TT partial mass)^(1/T)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not temperature > 0:
        raise DomainError("temperature must be > 0")
    rng = np.random.default_rng(seed)
    grams = _suffix_grams(tt.cores)
    out = np.empty((n, tt.ndim), dtype=np.int64)
    warned = False
    chunk = 20_000
    for s in range(0, n, chunk):
        m = min(chunk, n - s)
        idx, zero_rows = _conditional_sample(tt.cores, grams, np.ones((m, 1)), rng, temperature, False)
        out[s : s + m] = idx
        if zero_rows and not warned:
            warnings.warn("ttgo_sample: zero-mass tensor region, falling back to uniform sampling", RuntimeWarning, stacklevel=2)
            warned = True
    return out


class PolicyRetriever:
    """Greedy-action retrieval from a TT over (state dims..., action dims...).

    Small action grids are scanned exhaustively (exact argmax); larger ones
    go through the TTGO sampling path. Construction precomputes whatever the
    chosen path needs so batched queries stay cheap inside value iteration.
    """

    def __init__(self, tt, n_state_dims, n_candidates=_DEFAULT_CANDIDATES, refine=True,
                 seed=0, exhaustive_threshold=_EXHAUSTIVE_THRESHOLD):
        if not 0 < n_state_dims < tt.ndim:
            raise DomainError("state dimension count must be in (0, d)")
        self.tt = tt
        self.p = n_state_dims
        self.n_candidates = n_candidates
        self.refine = refine
        self.seed = seed
        self.action_shape = tt.shape[n_state_dims:]
        self.n_actions = int(np.prod(self.action_shape))
        self.exhaustive = self.n_actions <= exhaustive_threshold
        self._rng = np.random.default_rng(seed)
        if self.exhaustive:
            flat = tt.cores[self.p]
            for k in range(self.p + 1, tt.ndim):
                flat = np.einsum("a...b,bnc->a...nc", flat, tt.cores[k])
            self._flat = flat.reshape(flat.shape[0], -1)  # (r_p, n_actions)
        else:
            self._density = _shifted_density(tt, self._rng)
            if self._density is not None:
                self._grams = _suffix_grams(self._density.cores)

    def _action_points(self, action_idx):
        pts = np.empty(action_idx.shape, dtype=np.float64)
        for k in range(action_idx.shape[1]):
            pts[:, k] = self.tt.grid.points[self.p + k][action_idx[:, k]]
        return pts

    def query_batch(self, states):
        """Greedy actions and advantage values for a batch of states (B, p)."""
        states = np.asarray(states, dtype=np.float64)
        rows = self.tt.prefix_rows(states)
        B = rows.shape[0]
        if self.exhaustive:
            idx = np.empty(B, dtype=np.int64)
            vals = np.empty(B)
            step = max(1, (1 << 24) // max(self.n_actions, 1))
            for s in range(0, B, step):
                sl = slice(s, min(s + step, B))
                table = rows[sl] @ self._flat
                idx[sl] = np.argmax(table, axis=1)
                vals[sl] = table[np.arange(table.shape[0]), idx[sl]]
            action_idx = np.column_stack(np.unravel_index(idx, self.action_shape))
            return self._action_points(action_idx), vals
        return self._query_batch_sampled(states, rows)

    def query_batch_topk(self, states, k):
        """Top-k candidate actions per state, ranked by the advantage TT.

        Returns (actions (B, k, l), values (B, k)); k is capped by what the
        retrieval path can rank.
        """
        states = np.asarray(states, dtype=np.float64)
        rows = self.tt.prefix_rows(states)
        B = rows.shape[0]
        l = self.tt.ndim - self.p
        if self.exhaustive:
            k = min(k, self.n_actions)
            actions = np.empty((B, k, l))
            vals = np.empty((B, k))
            step = max(1, (1 << 24) // max(self.n_actions, 1))
            for s in range(0, B, step):
                sl = slice(s, min(s + step, B))
                table = rows[sl] @ self._flat
                if k < self.n_actions:
                    part = np.argpartition(-table, k - 1, axis=1)[:, :k]
                else:
                    part = np.tile(np.arange(self.n_actions), (table.shape[0], 1))
                vals[sl] = np.take_along_axis(table, part, axis=1)
                flat_idx = part.ravel()
                action_idx = np.column_stack(np.unravel_index(flat_idx, self.action_shape))
                actions[sl] = self._action_points(action_idx).reshape(-1, k, l)
            return actions, vals
        cand, cvals = self._sampled_candidates(states, rows)
        k = min(k, cvals.shape[1])
        part = np.argpartition(-cvals, k - 1, axis=1)[:, :k]
        vals = np.take_along_axis(cvals, part, axis=1)
        sel = np.take_along_axis(cand, part[:, :, None], axis=1)
        actions = self._action_points(sel.reshape(-1, l)).reshape(B, k, l)
        return actions, vals

    def _sampled_candidates(self, states, rows):
        """Candidate action indices (B, C, l) and their TT values (B, C)."""
        B = rows.shape[0]
        C = self.n_candidates
        l = self.tt.ndim - self.p
        if self._density is None:
            cand = np.column_stack(
                [self._rng.integers(0, n, size=B * C) for n in self.action_shape]
            ).reshape(B, C, l)
        else:
            drows = self._density.prefix_rows(states)
            rep = np.repeat(drows, C, axis=0)
            idx, _ = _conditional_sample(
                self._density.cores[self.p:], self._grams[self.p:], rep, self._rng, 1.0, False
            )
            greedy, _ = _conditional_sample(
                self._density.cores[self.p:], self._grams[self.p:], drows, self._rng, 1.0, True
            )
            cand = idx.reshape(B, C, l)
            cand[:, 0, :] = greedy
        flat = cand.reshape(B * C, l)
        vals = _suffix_values(self.tt, self.p, np.repeat(rows, C, axis=0), flat).reshape(B, C)
        return cand, vals

    def _query_batch_sampled(self, states, rows):
        B = rows.shape[0]
        cand, vals = self._sampled_candidates(states, rows)
        best = np.argmax(vals, axis=1)
        idx = cand[np.arange(B), best]
        bvals = vals[np.arange(B), best]
        if self.refine:
            idx, bvals = self._ascend_batch(rows, idx, bvals)
        return self._action_points(idx), bvals

    def _ascend_batch(self, rows, idx, vals):
        shape = self.action_shape
        improved = True
        while improved:
            improved = False
            for k in range(len(shape)):
                for delta in (1, -1):
                    cand = idx.copy()
                    cand[:, k] += delta
                    ok = (cand[:, k] >= 0) & (cand[:, k] < shape[k])
                    if not np.any(ok):
                        continue
                    full = np.full(len(idx), -np.inf)
                    full[ok] = _suffix_values(self.tt, self.p, rows[ok], cand[ok])
                    better = full > vals
                    if np.any(better):
                        idx[better] = cand[better]
                        vals[better] = full[better]
                        improved = True
        return idx, vals

    def query(self, x):
        u, v = self.query_batch(np.asarray(x, dtype=np.float64)[None, :])
        return u[0], float(v[0])


def _suffix_values(tt, start, rows, idx):
    """Evaluate cores start..d at integer indices, from given row vectors."""
    from .tt import _advance_rows

    v = rows
    for k in range(idx.shape[1]):
        v = _advance_rows(v, tt.node_core(start + k), idx[:, k], None)
    return v[:, 0].copy()


def ttgo_policy_query(a_xu, x, n_candidates=_DEFAULT_CANDIDATES, refine=True, seed=0,
                      exhaustive_threshold=_EXHAUSTIVE_THRESHOLD):
    """Fix the state coordinates of an advantage TT, then argmax the actions.

    The random stream is derived from (seed, x) so batched and per-state
    calls give identical results.
    """
    x = np.asarray(x, dtype=np.float64)
    derived = np.random.SeedSequence([seed] + list(x.view(np.uint64)))
    retr = PolicyRetriever(
        a_xu, x.size, n_candidates=n_candidates, refine=refine,
        seed=derived.generate_state(1)[0], exhaustive_threshold=exhaustive_threshold,
    )
    return retr.query(x)


def ttgo_policy_query_batch(a_xu, xs, **kwargs):
    """Per-state policy queries over a batch; identical to looped calls."""
    xs = np.asarray(xs, dtype=np.float64)
    us, vals = [], []
    for x in xs:
        u, v = ttgo_policy_query(a_xu, x, **kwargs)
        us.append(u)
        vals.append(v)
    return np.array(us), np.array(vals)
