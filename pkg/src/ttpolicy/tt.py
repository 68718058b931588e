"""Tensor-train representation on rectangular grids.

A d-dimensional function discretized on a grid is stored as a chain of
third-order cores; the tensor entry at a multi-index is the product of
the corresponding matrix slices, and off-grid points are evaluated by
linear interpolation of the slices along each continuous dimension.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def _advance_rows(v, core_by_node, idx, w):
    """Chain step v[b] <- v[b] @ core[idx[b]], linearly interpolated toward
    the next node when weights w are given.

    core_by_node has shape (n, r0, r1). Rows are sorted by node index once,
    then each group is a contiguous slice fed to a single matrix product.
    """
    B = v.shape[0]
    n = core_by_node.shape[0]
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    vs = v[order]
    out_s = np.empty((B, core_by_node.shape[2]))
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    bounds = np.r_[starts, B]
    if w is not None:
        ws = w[order][:, None]
    for g in range(len(starts)):
        b0, b1 = bounds[g], bounds[g + 1]
        i = sidx[b0]
        block = vs[b0:b1]
        left = block @ core_by_node[i]
        if w is None:
            out_s[b0:b1] = left
        else:
            right = block @ core_by_node[min(i + 1, n - 1)]
            wb = ws[b0:b1]
            out_s[b0:b1] = (1.0 - wb) * left + wb * right
    out = np.empty_like(out_s)
    out[order] = out_s
    return out


class Grid:
    """Per-dimension discretization of a rectangular domain.

    Continuous dimensions need >= 2 uniformly spaced ascending nodes;
    dimensions flagged discrete may have a single node and are never
    interpolated (evaluation requires an exact node hit).
    """

    __slots__ = ("points", "discrete", "_spacing")

    def __init__(self, points, discrete=None):
        pts = tuple(np.ascontiguousarray(p, dtype=np.float64) for p in points)
        if discrete is None:
            discrete = (False,) * len(pts)
        disc = tuple(bool(f) for f in discrete)
        if len(disc) != len(pts):
            raise DomainError("discrete flags do not match dimension count")
        spacing = []
        for k, (p, d) in enumerate(zip(pts, disc)):
            if p.ndim != 1 or p.size < 1:
                raise DomainError(f"dimension {k}: need a 1-d coordinate array")
            if p.size > 1 and not np.all(np.diff(p) > 0):
                raise DomainError(f"dimension {k}: coordinates must be strictly increasing")
            if not d and p.size < 2:
                raise DomainError(f"dimension {k}: continuous dimension needs >= 2 nodes")
            if p.size >= 2:
                h = np.diff(p)
                href = (p[-1] - p[0]) / (p.size - 1)
                if np.max(np.abs(h - href)) > 1e-12 * max(abs(href), 1.0):
                    raise DomainError(f"dimension {k}: spacing is not uniform")
                spacing.append(float(href))
            else:
                spacing.append(0.0)
        self.points = pts
        self.discrete = disc
        self._spacing = tuple(spacing)

    @classmethod
    def regular(cls, bounds, nodes, discrete=None):
        """Uniform grid from [(lo, hi), ...] bounds and per-dimension node counts."""
        if np.isscalar(nodes):
            nodes = [int(nodes)] * len(bounds)
        pts = []
        for (lo, hi), n in zip(bounds, nodes):
            if n == 1:
                pts.append(np.array([0.5 * (lo + hi)]))
            else:
                pts.append(np.linspace(lo, hi, int(n)))
        return cls(pts, discrete)

    @property
    def ndim(self):
        return len(self.points)

    @property
    def shape(self):
        return tuple(p.size for p in self.points)

    @property
    def lower(self):
        return np.array([p[0] for p in self.points])

    @property
    def upper(self):
        return np.array([p[-1] for p in self.points])

    def spacing(self, k):
        return self._spacing[k]

    def subgrid(self, start, stop=None):
        """Grid over dimensions start..stop (python slice semantics)."""
        sl = slice(start, stop)
        return Grid(self.points[sl], self.discrete[sl])

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            self.discrete == other.discrete
            and len(self.points) == len(other.points)
            and all(np.array_equal(a, b) for a, b in zip(self.points, other.points))
        )

    def __hash__(self):  # grids are used as value objects; identity hash is fine
        return id(self)

    def locate(self, k, x):
        """Cell index and interpolation weight for coordinates x in dimension k.

        Returns (idx, w) arrays with idx the left node of the bracketing cell
        and w in [0, 1]. Discrete dimensions require exact node hits (w = 0).
        """
        p = self.points[k]
        x = np.asarray(x, dtype=np.float64)
        if self.discrete[k]:
            if p.size == 1:
                idx = np.zeros(x.shape, dtype=np.intp)
                if np.any(np.abs(x - p[0]) > 1e-9 * max(1.0, abs(p[0]))):
                    raise DomainError(f"dimension {k}: discrete dimension requires exact node values")
                return idx, np.zeros_like(x)
            h = self._spacing[k]
            idx = np.clip(np.rint((x - p[0]) / h), 0, p.size - 1).astype(np.intp)
            if np.any(np.abs(x - p[idx]) > 1e-9 * max(abs(h), 1.0)):
                raise DomainError(f"dimension {k}: discrete dimension requires exact node values")
            return idx, np.zeros_like(x)
        lo, hi = p[0], p[-1]
        tol = 1e-12 * max(hi - lo, 1.0)
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise DomainError(
                f"dimension {k}: point outside grid bounds [{lo}, {hi}] (no extrapolation)"
            )
        h = self._spacing[k]
        idx = np.clip(((x - lo) / h).astype(np.intp), 0, p.size - 2)
        w = (x - p[idx]) / h
        return idx, np.clip(w, 0.0, 1.0)


class TensorTrain:
    """Chain of third-order cores (r_{k-1}, n_k, r_k) over a Grid.

    Immutable after construction; boundary ranks are 1 and adjacent core
    ranks must match. Instances share core arrays freely.
    """

    __slots__ = ("cores", "grid", "_by_node")

    def __init__(self, cores, grid, validate=True):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in cores]
        if validate:
            if len(cores) != grid.ndim:
                raise DomainError("core count does not match grid dimensionality")
            if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
                raise DomainError("boundary ranks must be 1")
            for k, c in enumerate(cores):
                if c.ndim != 3:
                    raise DomainError(f"core {k} is not third-order")
                if c.shape[1] != grid.shape[k]:
                    raise DomainError(f"core {k} node count {c.shape[1]} != grid {grid.shape[k]}")
                if k > 0 and cores[k - 1].shape[2] != c.shape[0]:
                    raise DomainError(f"rank mismatch between cores {k-1} and {k}")
                if not np.all(np.isfinite(c)):
                    raise DomainError(f"core {k} contains non-finite entries")
        self.cores = cores
        self.grid = grid
        self._by_node = [None] * len(cores)

    @property
    def ndim(self):
        return len(self.cores)

    def node_core(self, k):
        """Core k in node-major (n, r0, r1) contiguous layout, cached."""
        if self._by_node[k] is None:
            self._by_node[k] = np.ascontiguousarray(self.cores[k].transpose(1, 0, 2))
        return self._by_node[k]

    @property
    def ranks(self):
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def max_rank(self):
        return max(self.ranks)

    @property
    def shape(self):
        return self.grid.shape

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def element(self, index):
        """Tensor entry at an integer multi-index (product of core slices)."""
        return float(self.element_batch(np.asarray(index, dtype=np.intp)[None, :])[0])

    def element_batch(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        if indices.ndim != 2 or indices.shape[1] != self.ndim:
            raise DomainError("index batch must have shape (B, d)")
        for k, n in enumerate(self.shape):
            col = indices[:, k]
            if np.any(col < 0) or np.any(col >= n):
                raise DomainError(f"index out of range in dimension {k}")
        v = self.cores[0][0, indices[:, 0], :]
        for k in range(1, self.ndim):
            v = _advance_rows(v, self.node_core(k), indices[:, k], None)
        return v[:, 0].copy()

    def eval(self, point):
        """Continuous evaluation via per-core linear interpolation."""
        return float(self.eval_batch(np.asarray(point, dtype=np.float64)[None, :])[0])

    def eval_batch(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.ndim:
            raise DomainError("point batch must have shape (B, d)")
        v = self._interp_row(0, points[:, 0])
        for k in range(1, self.ndim):
            idx, w = self.grid.locate(k, points[:, k])
            if self.grid.discrete[k] or self.cores[k].shape[1] == 1:
                w = None
            v = _advance_rows(v, self.node_core(k), idx, w)
        return v[:, 0].copy()

    def _interp_row(self, k, x):
        """Leading-core interpolated rows, shape (B, r_k)."""
        idx, w = self.grid.locate(k, x)
        core = self.cores[k]
        left = core[0, idx, :]
        if self.grid.discrete[k] or core.shape[1] == 1:
            return left
        right = core[0, np.minimum(idx + 1, core.shape[1] - 1), :]
        return (1.0 - w[:, None]) * left + w[:, None] * right

    def prefix_rows(self, points):
        """Row vectors from interpolated products of the first p cores.

        points has shape (B, p) with p <= d; returns (B, r_p). For p = d
        the final column is the full evaluation.
        """
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] > self.ndim:
            raise DomainError("prefix batch must have shape (B, p) with p <= d")
        p = points.shape[1]
        if p == 0:
            return np.ones((points.shape[0], 1))
        v = self._interp_row(0, points[:, 0])
        for k in range(1, p):
            idx, w = self.grid.locate(k, points[:, k])
            if self.grid.discrete[k] or self.cores[k].shape[1] == 1:
                w = None
            v = _advance_rows(v, self.node_core(k), idx, w)
        return v

    def eval_partial(self, leading_point):
        """Fix the first p coordinates, returning a TT over the remaining dims."""
        leading_point = np.asarray(leading_point, dtype=np.float64)
        p = leading_point.size
        if p >= self.ndim:
            raise DomainError("eval_partial requires p < d; use eval for full points")
        if p == 0:
            return self
        row = self.prefix_rows(leading_point[None, :])[0]
        head = np.einsum("i,inj->nj", row, self.cores[p])[None, :, :]
        return TensorTrain([head] + list(self.cores[p + 1:]), self.grid.subgrid(p), validate=False)

    # ------------------------------------------------------------------
    # Serialization ("TTM1" binary format)
    # ------------------------------------------------------------------

    def save(self, path):
        with open(path, "wb") as f:
            f.write(serialize_tt(self))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return deserialize_tt(f.read())

    def __repr__(self):
        return f"TensorTrain(shape={self.shape}, ranks={self.ranks})"


@dataclass
class SolverConfig:
    """Shared knobs for TT construction: cross accuracy, rank cap, seed."""

    eps: float = 1e-3
    r_max: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be > 0")
        if self.r_max < 1:
            raise DomainError("r_max must be >= 1")


# ----------------------------------------------------------------------
# Module-level operations
# ----------------------------------------------------------------------


def tt_element(tt, index):
    return tt.element(index)


def tt_eval(tt, point):
    return tt.eval(point)


def tt_eval_partial(tt, leading_point):
    return tt.eval_partial(leading_point)


def tt_zero(grid):
    """Rank-1 TT that is identically zero."""
    return TensorTrain([np.zeros((1, n, 1)) for n in grid.shape], grid, validate=False)


def tt_const(grid, value):
    """Rank-1 TT that is identically `value`."""
    cores = [np.ones((1, n, 1)) for n in grid.shape]
    cores[0] = cores[0] * float(value)
    return TensorTrain(cores, grid, validate=False)


def tt_scale(tt, c):
    """Pointwise scaling by a real constant (scales the first core)."""
    cores = [tt.cores[0] * float(c)] + list(tt.cores[1:])
    return TensorTrain(cores, tt.grid, validate=False)


def tt_add(a, b):
    """Pointwise sum via block-diagonal core concatenation."""
    if a.grid != b.grid:
        raise DomainError("tt_add requires operands on the same grid")
    d = a.ndim
    cores = []
    for k in range(d):
        ca, cb = a.cores[k], b.cores[k]
        n = ca.shape[1]
        if d == 1:
            cores.append(ca + cb)
            continue
        if k == 0:
            cores.append(np.concatenate([ca, cb], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            ra0, _, ra1 = ca.shape
            rb0, _, rb1 = cb.shape
            c = np.zeros((ra0 + rb0, n, ra1 + rb1))
            c[:ra0, :, :ra1] = ca
            c[ra0:, :, ra1:] = cb
            cores.append(c)
    return TensorTrain(cores, a.grid, validate=False)


def tt_svd(dense, eps, r_max, grid=None):
    """TT decomposition of a dense tensor by sequential truncated SVD.

    Truncation budget eps is split evenly over the d-1 bonds in the
    Frobenius sense. If r_max forces truncation beyond that budget, a
    best-effort TT is returned and the achieved error is reported via
    a warning.
    """
    dense = np.asarray(dense, dtype=np.float64)
    shape = dense.shape
    d = dense.ndim
    if grid is None:
        grid = Grid.regular([(0.0, 1.0)] * d, shape, discrete=[n == 1 for n in shape])
    norm = np.linalg.norm(dense)
    if norm == 0.0:
        return tt_zero(grid)
    delta = eps * norm / np.sqrt(max(d - 1, 1))
    cores = []
    c = dense.reshape(1, -1)
    r_prev = 1
    discarded = 0.0
    for k in range(d - 1):
        mat = c.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
        rank = int(np.searchsorted(-tail, -delta))  # smallest rank with tail <= delta
        rank = max(1, min(rank if rank > 0 else 1, len(s)))
        if rank > r_max:
            discarded += float(np.sum(s[r_max:] ** 2))
            rank = r_max
        cores.append(u[:, :rank].reshape(r_prev, shape[k], rank))
        c = s[:rank, None] * vt[:rank]
        r_prev = rank
    cores.append(c.reshape(r_prev, shape[d - 1], 1))
    if discarded > 0.0:
        achieved = np.sqrt(discarded) / norm
        warnings.warn(
            f"tt_svd: r_max={r_max} too small for eps={eps}; achieved relative error ~{achieved:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return TensorTrain(cores, grid, validate=False)


def tt_round(tt, eps, r_max=None):
    """Recompress a TT: right-to-left orthogonalization, then truncated SVDs.

    Per-bond truncation threshold is eps/sqrt(d-1) of the tensor norm.
    """
    if r_max is None:
        r_max = max(tt.ranks)
    d = tt.ndim
    cores = [c.copy() for c in tt.cores]
    if d == 1:
        return TensorTrain(cores, tt.grid, validate=False)
    # Right-to-left orthogonalization: leaves overall norm in cores[0].
    for k in range(d - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        mat = cores[k].reshape(r0, n * r1)
        q, r = np.linalg.qr(mat.T)
        q, r = q.T, r.T  # mat = r @ q, q has orthonormal rows
        cores[k] = q.reshape(q.shape[0], n, r1)
        cores[k - 1] = np.einsum("inj,jk->ink", cores[k - 1], r)
    norm = np.linalg.norm(cores[0])
    if norm == 0.0:
        return tt_zero(tt.grid)
    delta = eps * norm / np.sqrt(d - 1)
    # Left-to-right truncated SVD sweep.
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        mat = cores[k].reshape(r0 * n, r1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
        rank = int(np.searchsorted(-tail, -delta))
        rank = max(1, min(rank if rank > 0 else 1, len(s), r_max))
        cores[k] = u[:, :rank].reshape(r0, n, rank)
        sv = s[:rank, None] * vt[:rank]
        cores[k + 1] = np.einsum("ij,jnk->ink", sv, cores[k + 1])
    return TensorTrain(cores, tt.grid, validate=False)


def contract_leading(tt, weights):
    """Collapse the first p dimensions against per-dimension weight vectors.

    Each of the first p cores is averaged over its node axis with the given
    weights; the resulting 1 x r_p row is folded into core p+1. Evaluating
    the result equals the weighted sum of tt over all leading multi-indices
    with product weights.
    """
    p = len(weights)
    if p == 0:
        return tt
    if p >= tt.ndim:
        raise DomainError("contract_leading requires p < d")
    row = np.ones((1, 1))
    for k, w in enumerate(weights):
        w = np.asarray(w, dtype=np.float64)
        if w.size != tt.shape[k]:
            raise DomainError(f"weight vector {k} has length {w.size}, expected {tt.shape[k]}")
        row = row @ np.einsum("n,inj->ij", w, tt.cores[k])
    head = np.einsum("ai,inj->anj", row, tt.cores[p])
    return TensorTrain([head] + list(tt.cores[p + 1:]), tt.grid.subgrid(p), validate=False)


def dense_tensor(tt):
    """Full tensor reconstruction (test-scale only)."""
    out = tt.cores[0][0]  # (n_0, r_1)
    for k in range(1, tt.ndim):
        out = np.tensordot(out, tt.cores[k], axes=([out.ndim - 1], [0]))
    return out.reshape(tt.shape)


# ----------------------------------------------------------------------
# Binary format: magic "TTM1", little-endian
#   u32 d
#   per dimension: u32 n_k, u8 discrete, n_k * f64 coordinates
#   per core:      u32 r_{k-1}, u32 r_k, r_{k-1}*n_k*r_k * f64 (row-major)
# ----------------------------------------------------------------------

_MAGIC = b"TTM1"


def serialize_tt(tt):
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", tt.ndim))
    for k in range(tt.ndim):
        pts = tt.grid.points[k]
        buf.write(struct.pack("<IB", pts.size, 1 if tt.grid.discrete[k] else 0))
        buf.write(pts.astype("<f8").tobytes())
    for c in tt.cores:
        buf.write(struct.pack("<II", c.shape[0], c.shape[2]))
        buf.write(np.ascontiguousarray(c, dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize_tt(data):
    if data[:4] != _MAGIC:
        raise DomainError("not a TTM1 tensor-train file")
    off = 4
    (d,) = struct.unpack_from("<I", data, off)
    off += 4
    points, discrete, ns = [], [], []
    for _ in range(d):
        n, flag = struct.unpack_from("<IB", data, off)
        off += 5
        coords = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        points.append(coords)
        discrete.append(bool(flag))
        ns.append(n)
    grid = Grid(points, discrete)
    cores = []
    for k in range(d):
        r0, r1 = struct.unpack_from("<II", data, off)
        off += 8
        cnt = r0 * ns[k] * r1
        vals = np.frombuffer(data, dtype="<f8", count=cnt, offset=off).copy()
        off += 8 * cnt
        cores.append(vals.reshape(r0, ns[k], r1))
    return TensorTrain(cores, grid)
