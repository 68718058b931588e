"""Domain contraction: collapse parameter dimensions of an advantage TT.

A factorized parameter distribution weighs the leading (parameter) cores
of a parameter-augmented advantage function, yielding a parameter-
conditioned advantage over (state, action) at tensor-core cost. Point
(delta) and full-domain uniform distributions recover domain adaptation
and domain randomization as the two limit cases. A function-level
brute-force route over all parameter grid combinations is kept as the
correctness oracle and timing baseline.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DomainError
from .tt import TensorTrain, contract_leading


class ParamDistribution:
    """Per-dimension discrete probability weights over parameter grid nodes."""

    def __init__(self, weights):
        ws = []
        for k, w in enumerate(weights):
            w = np.asarray(w, dtype=np.float64)
            if w.ndim != 1 or w.size < 1:
                raise DomainError(f"weight vector {k} must be a nonempty 1-d array")
            if np.any(w < -1e-15):
                raise DomainError(f"weight vector {k} has negative entries")
            s = w.sum()
            if abs(s - 1.0) > 1e-12:
                raise DomainError(f"weight vector {k} sums to {s}, expected 1")
            ws.append(np.clip(w, 0.0, None))
        self.weights = ws

    @property
    def ndim(self):
        return len(self.weights)

    def joint(self):
        """Dense product-form joint weights, shape N_1 x ... x N_d (test scale)."""
        out = np.ones(1)
        for w in self.weights:
            out = np.multiply.outer(out, w)
        return out[0] if out.ndim > len(self.weights) else out


def _advantage_tt(a):
    tt = getattr(a, "A", a)
    if not isinstance(tt, TensorTrain):
        raise DomainError("expected a TensorTrain or an object with a .A tensor train")
    return tt


def contract(a, dist: ParamDistribution):
    """Core-level weighted collapse of the leading parameter dimensions."""
    tt = _advantage_tt(a)
    p = dist.ndim
    declared = getattr(a, "n_param_dims", p)
    if p != declared:
        raise DomainError(f"distribution has {p} dimensions, advantage declares {declared}")
    if p >= tt.ndim:
        raise DomainError("distribution covers all TT dimensions; nothing left to optimize")
    for k, w in enumerate(dist.weights):
        if w.size != tt.shape[k]:
            raise DomainError(f"weight vector {k} length {w.size} != grid size {tt.shape[k]}")
    return contract_leading(tt, dist.weights)


def contract_function_level(a, dist: ParamDistribution, points):
    """Brute-force sum over every parameter grid combination (oracle route).

    Evaluates the full advantage TT at (alpha_j, x, u) for all j and forms
    the probability-weighted sum; cost grows with the product of parameter
    node counts.
    """
    tt = _advantage_tt(a)
    p = dist.ndim
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != tt.ndim - p:
        raise DomainError("points must have shape (B, d - p)")
    for k, w in enumerate(dist.weights):
        if w.size != tt.shape[k]:
            raise DomainError(f"weight vector {k} length {w.size} != grid size {tt.shape[k]}")
    coords = [tt.grid.points[k] for k in range(p)]
    out = np.zeros(points.shape[0])
    for combo in itertools.product(*(range(w.size) for w in dist.weights)):
        weight = 1.0
        for k, j in enumerate(combo):
            weight *= dist.weights[k][j]
        alpha = np.array([coords[k][j] for k, j in enumerate(combo)])
        pts = np.column_stack([np.tile(alpha, (points.shape[0], 1)), points])
        out += weight * tt.eval_batch(pts)
    return out


def dist_delta(alpha, grid):
    """Two-point bracketing weights with linear proportions (one-hot on nodes)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if alpha.size != grid.ndim:
        raise DomainError("alpha dimensionality does not match the parameter grid")
    weights = []
    for k in range(grid.ndim):
        idx, w = grid.locate(k, alpha[k : k + 1])
        vec = np.zeros(grid.shape[k])
        vec[idx[0]] = 1.0 - w[0]
        if w[0] > 0.0:
            vec[idx[0] + 1] += w[0]
        weights.append(vec)
    return ParamDistribution(weights)


def dist_uniform_band(nu, w, grid):
    """Weights proportional to band overlap with node-centered grid cells.

    Each node owns a cell of one grid spacing centered on it; the band
    [nu - w/2, nu + w/2] is intersected with every cell and the overlaps
    are renormalized. A band spanning the whole domain reproduces the
    uniform (domain-randomization) distribution.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=np.float64))
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), nu.shape)
    if nu.size != grid.ndim:
        raise DomainError("nu dimensionality does not match the parameter grid")
    if np.any(w <= 0):
        raise DomainError("bandwidth must be > 0 in every dimension")
    weights = []
    for k in range(grid.ndim):
        pts = grid.points[k]
        if pts.size == 1:
            weights.append(np.array([1.0]))
            continue
        h = grid.spacing(k)
        lo_cells = pts - 0.5 * h
        hi_cells = pts + 0.5 * h
        band_lo = nu[k] - 0.5 * w[k]
        band_hi = nu[k] + 0.5 * w[k]
        overlap = np.maximum(0.0, np.minimum(hi_cells, band_hi) - np.maximum(lo_cells, band_lo))
        total = overlap.sum()
        if total <= 0.0:
            raise DomainError(f"band in dimension {k} lies entirely outside the domain")
        weights.append(overlap / total)
    return ParamDistribution(weights)


def dist_uniform(grid):
    """Equal weight on every node (domain randomization)."""
    return ParamDistribution([np.full(n, 1.0 / n) for n in grid.shape])


def index_bandwidth_to_physical(grid, fraction_of_nodes):
    """Translate a bandwidth given in grid-index units (w = N * fraction) to
    per-dimension physical widths via the grid spacing."""
    out = np.empty(grid.ndim)
    for k in range(grid.ndim):
        n = grid.shape[k]
        h = grid.spacing(k) if n > 1 else (1.0)
        out[k] = max(fraction_of_nodes * n, 1.0) * h
    return out


def parse_dist_literal(specs, grid):
    """Per-dimension literals: "delta:<value>", "uniform", "band:<center>,<width>"."""
    if len(specs) != grid.ndim:
        raise DomainError("one distribution literal per parameter dimension required")
    weights = []
    for k, spec in enumerate(specs):
        spec = spec.strip()
        sub = grid.subgrid(k, k + 1)
        if spec == "uniform":
            weights.append(dist_uniform(sub).weights[0])
        elif spec.startswith("delta:"):
            weights.append(dist_delta([float(spec[6:])], sub).weights[0])
        elif spec.startswith("band:"):
            try:
                center, width = (float(t) for t in spec[5:].split(","))
            except ValueError as exc:
                raise DomainError(f"bad band literal {spec!r}") from exc
            weights.append(dist_uniform_band([center], [width], sub).weights[0])
        else:
            raise DomainError(f"unknown distribution literal {spec!r}")
    return ParamDistribution(weights)
