"""Finite metric measure spaces.

A :class:`Space` is a finite point set with a distance, a positive measure
and a neighbourhood scale ``epsilon``.  Neighbours of ``x`` are the points
``y != x`` with ``dist(x, y) <= epsilon``; they are stored in CSR form
(``indptr``, ``indices``) with sorted column indices, which every
differential operator in the package iterates over.

Scalar fields are plain float arrays indexed by point position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (AsymmetricDistance, NonpositiveWeight,
                     NotLipschitzOnSubset, TriangleViolation,
                     ZeroDistanceDistinctPoints)

# relative slack for metric-axiom and Lipschitz checks; float sums of
# distances may be off by a few ulps
RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Space:
    """A finite metric measure space.

    Either ``dist`` (dense matrix) or ``coords`` (points of R^k measured in
    the ``p``-norm) carries the metric.  Coordinate spaces skip the cubic
    triangle scan since the metric is a norm distance by construction.
    """

    point_ids: tuple
    weights: np.ndarray
    epsilon: float
    dist_matrix: np.ndarray | None = None
    coords: np.ndarray | None = None
    p: float = 2.0
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self._index is None:
            object.__setattr__(
                self, "_index", {pid: i for i, pid in enumerate(self.point_ids)})

    @property
    def n(self) -> int:
        return len(self.point_ids)

    def __len__(self):
        return len(self.point_ids)

    def index(self, pid) -> int:
        return self._index[pid]

    def indices_of(self, pids: Iterable) -> np.ndarray:
        return np.array([self._index[p] for p in pids], dtype=np.intp)

    @cached_property
    def dist(self) -> np.ndarray:
        if self.dist_matrix is not None:
            return self.dist_matrix
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return _pnorm(diff, self.p)

    def distance(self, i, j) -> np.ndarray:
        """Vectorised distance lookup between index arrays."""
        if self.dist_matrix is not None:
            return self.dist_matrix[i, j]
        return _pnorm(self.coords[i] - self.coords[j], self.p)

    @cached_property
    def full(self) -> "Support":
        return Support(self, frozenset(range(self.n)))

    def support(self, pids: Iterable) -> "Support":
        return Support(self, frozenset(self._index[p] for p in pids))

    def support_idx(self, idx: Iterable[int]) -> "Support":
        return Support(self, frozenset(int(i) for i in idx))

    def with_epsilon(self, epsilon: float) -> "Space":
        return Space(self.point_ids, self.weights, float(epsilon),
                     self.dist_matrix, self.coords, self.p, self._index)

    @cached_property
    def _pairs(self) -> tuple[np.ndarray, np.ndarray]:
        # all ordered pairs (x, y), x != y, with dist <= epsilon; sorted
        if self.dist_matrix is not None:
            mask = self.dist_matrix <= self.epsilon
            np.fill_diagonal(mask, False)
            rows, cols = np.nonzero(mask)
            return rows, cols
        if self.n < 2:
            return np.zeros(0, np.intp), np.zeros(0, np.intp)
        tree = cKDTree(self.coords)
        pairs = tree.query_pairs(self.epsilon * (1 + 1e-9) + 1e-300,
                                 p=self.p, output_type="ndarray")
        if len(pairs):
            keep = self.distance(pairs[:, 0], pairs[:, 1]) <= self.epsilon
            pairs = pairs[keep]
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.intp)
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.intp)
        order = np.lexsort((cols, rows))
        return rows[order], cols[order]

    def neighbors(self, pid) -> list:
        """Neighbour ids of ``pid`` in the whole space."""
        return self.full.neighbor_ids(self._index[pid])

    def diameter(self) -> float:
        return float(self.dist.max()) if self.n else 0.0


def _pnorm(diff: np.ndarray, p: float) -> np.ndarray:
    if p == 2:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if p == 1:
        return np.sum(np.abs(diff), axis=-1)
    if np.isinf(p):
        return np.max(np.abs(diff), axis=-1)
    return np.sum(np.abs(diff) ** p, axis=-1) ** (1.0 / p)


class Support:
    """A subset ``E`` of a space, standing for the restricted measure.

    Neighbour structure is computed inside the subset: points outside get
    empty neighbour lists, points inside only see neighbours in ``E``.
    """

    def __init__(self, space: Space, subset: frozenset):
        self.space = space
        self.subset = frozenset(int(i) for i in subset)
        if self.subset and (min(self.subset) < 0 or max(self.subset) >= space.n):
            raise IndexError("support index out of range")

    def __repr__(self):
        ids = [self.space.point_ids[i] for i in sorted(self.subset)]
        return f"Support({ids!r})"

    def __eq__(self, other):
        return (isinstance(other, Support) and self.space is other.space
                and self.subset == other.subset)

    def __hash__(self):
        return hash(self.subset)

    def __le__(self, other: "Support"):
        return self.space is other.space and self.subset <= other.subset

    def __contains__(self, i):
        return i in self.subset

    def __len__(self):
        return len(self.subset)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.space.n, dtype=bool)
        m[list(self.subset)] = True
        return m

    @cached_property
    def idx(self) -> np.ndarray:
        return np.array(sorted(self.subset), dtype=np.intp)

    @property
    def ids(self) -> list:
        return [self.space.point_ids[i] for i in self.idx]

    @cached_property
    def _csr(self):
        rows, cols = self.space._pairs
        keep = self.mask[rows] & self.mask[cols]
        rows, cols = rows[keep], cols[keep]
        counts = np.bincount(rows, minlength=self.space.n)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
        edist = self.space.distance(rows, cols).astype(float)
        return indptr, rows, cols, edist

    @property
    def indptr(self) -> np.ndarray:
        return self._csr[0]

    @property
    def rows(self) -> np.ndarray:
        """Source point of every edge, in CSR order."""
        return self._csr[1]

    @property
    def cols(self) -> np.ndarray:
        """Target point of every edge, in CSR order."""
        return self._csr[2]

    @property
    def edge_dist(self) -> np.ndarray:
        return self._csr[3]

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbor_idx(self, i: int) -> np.ndarray:
        return self.cols[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_ids(self, i: int) -> list:
        return [self.space.point_ids[j] for j in self.neighbor_idx(i)]

    @cached_property
    def edge_keys(self) -> np.ndarray:
        # sorted, since CSR is row-major with sorted columns
        return self.rows.astype(np.int64) * self.space.n + self.cols

    def edge_position(self, rows, cols) -> tuple[np.ndarray, np.ndarray]:
        """Locate edges ``(rows[k], cols[k])`` in the CSR layout.

        Returns ``(found, pos)``; ``pos`` is the global edge index where
        ``found`` is true.
        """
        keys = np.asarray(rows, np.int64) * self.space.n + np.asarray(cols, np.int64)
        pos = np.searchsorted(self.edge_keys, keys)
        pos_c = np.minimum(pos, max(len(self.edge_keys) - 1, 0))
        found = (len(self.edge_keys) > 0) & (pos < len(self.edge_keys))
        if len(self.edge_keys):
            found &= self.edge_keys[pos_c] == keys
        return found, pos_c


def build_space(points: Sequence, dist, weights, epsilon: float) -> Space:
    """Validate and build a finite metric measure space.

    Raises
    ------
    AsymmetricDistance, ZeroDistanceDistinctPoints, TriangleViolation,
    NonpositiveWeight
    """
    points = tuple(points)
    n = len(points)
    if len(set(points)) != n:
        raise ValueError("point labels must be distinct")
    d = np.asarray(dist, dtype=float)
    w = np.asarray(weights, dtype=float)
    if d.shape != (n, n) or w.shape != (n,):
        raise ValueError(
            f"inconsistent shapes: {n} points, dist {d.shape}, weights {w.shape}")
    if not np.isfinite(d).all() or (d < 0).any():
        raise ValueError("distances must be finite and nonnegative")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if (np.diag(d) != 0).any():
        i = int(np.flatnonzero(np.diag(d) != 0)[0])
        raise ValueError(f"dist({points[i]!r}, {points[i]!r}) must be 0")
    asym = np.argwhere(d != d.T)
    if len(asym):
        i, j = asym[0]
        raise AsymmetricDistance((points[i], points[j]))
    zero = np.argwhere((d == 0) & ~np.eye(n, dtype=bool))
    if len(zero):
        i, j = zero[0]
        raise ZeroDistanceDistinctPoints((points[i], points[j]))
    bad = _triangle_violation(d)
    if bad is not None:
        x, y, z = bad
        raise TriangleViolation((points[x], points[y], points[z]),
                                d[x, z], d[x, y] + d[y, z])
    nonpos = np.flatnonzero(~(w > 0))
    if len(nonpos):
        i = int(nonpos[0])
        raise NonpositiveWeight(points[i], w[i])
    d = d.copy()
    d.setflags(write=False)
    return Space(points, w.copy(), float(epsilon), dist_matrix=d)


def _triangle_violation(d: np.ndarray):
    """First triple (x, y, z) with d(x,z) > d(x,y) + d(y,z), or None."""
    n = len(d)
    for y in range(n):
        through = d[:, y][:, None] + d[y, :][None, :]
        bad = d > through * (1 + RTOL)
        if bad.any():
            x, z = np.argwhere(bad)[0]
            return int(x), y, int(z)
    return None


def check_metric(space: Space) -> None:
    """Re-run the exhaustive metric-axiom scan on an existing space."""
    build_space(space.point_ids, space.dist, space.weights, space.epsilon)


def space_from_coords(points: Sequence, coords, weights, epsilon: float,
                      p: float = 2.0) -> Space:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    w = np.asarray(weights, dtype=float)
    points = tuple(points)
    if coords.shape[0] != len(points) or w.shape != (len(points),):
        raise ValueError("inconsistent shapes")
    if len(points) > 1 and len(np.unique(coords, axis=0)) != len(points):
        raise ZeroDistanceDistinctPoints(("<duplicate coordinates>",) * 2)
    nonpos = np.flatnonzero(~(w > 0))
    if len(nonpos):
        raise NonpositiveWeight(points[int(nonpos[0])], w[nonpos[0]])
    return Space(points, w, float(epsilon), coords=coords, p=p)


def as_field(space: Space, values) -> np.ndarray:
    """Coerce a mapping ``id -> value`` or a sequence to a field array."""
    if isinstance(values, Mapping):
        out = np.zeros(space.n)
        for pid, v in values.items():
            out[space.index(pid)] = v
        return out
    out = np.asarray(values, dtype=float)
    if out.shape != (space.n,):
        raise ValueError(f"field has shape {out.shape}, expected ({space.n},)")
    return out


def lipschitz_constant(space: Space, f) -> float:
    """max over x != y of |f(x) - f(y)| / d(x, y); 0 on a one-point space."""
    f = as_field(space, f)
    if space.n < 2:
        return 0.0
    d = space.dist
    off = ~np.eye(space.n, dtype=bool)
    return float(np.max(np.abs(f[:, None] - f[None, :])[off] / d[off]))


def mcshane_extend(space: Space, support: Support, values, L: float) -> np.ndarray:
    """Smallest ``L``-Lipschitz extension of ``values`` from ``support``.

    ``f(x) = min_p values(p) + L d(x, p)`` over ``p`` in ``support``.
    """
    values = as_field(space, values) if not isinstance(values, Mapping) \
        else _partial_field(space, values)
    idx = support.idx
    if len(idx) == 0:
        raise ValueError("cannot extend from an empty support")
    v = values[idx]
    d_sub = space.dist[np.ix_(idx, idx)]
    excess = np.abs(v[:, None] - v[None, :]) - L * d_sub * (1 + RTOL)
    if (excess > 1e-15 * (1 + np.abs(v).max())).any():
        a, b = np.argwhere(excess > 0)[0]
        raise NotLipschitzOnSubset(
            f"values are not {L}-Lipschitz on the support: "
            f"points {space.point_ids[idx[a]]!r}, {space.point_ids[idx[b]]!r}")
    f = np.min(v[None, :] + L * space.dist[:, idx], axis=1)
    f[idx] = v
    return f


def _partial_field(space: Space, values: Mapping) -> np.ndarray:
    out = np.full(space.n, np.nan)
    for pid, v in values.items():
        out[space.index(pid)] = v
    return out


def random_one_lipschitz(space: Space, seed) -> np.ndarray:
    """Random 1-Lipschitz field from McShane extension of random anchors.

    Anchor values are quantised to multiples of 2**-10 and clipped to be
    1-Lipschitz on the anchor set, so on integer-valued metrics every
    derived quantity stays exactly representable.
    """
    rng = np.random.default_rng(seed)
    n = space.n
    if n == 1:
        return np.array([np.round(rng.uniform(0, 1) * 1024) / 1024])
    k = int(rng.integers(1, n + 1))
    anchors = np.sort(rng.choice(n, size=k, replace=False))
    diam = space.diameter()
    raw = np.round(rng.uniform(0.0, diam, size=k) * 1024) / 1024
    clipped = np.min(raw[None, :] + space.dist[np.ix_(anchors, anchors)], axis=1)
    values = np.zeros(n)
    values[anchors] = clipped
    return mcshane_extend(space, space.support_idx(anchors), values, 1.0)


def two_point_slope(support: Support, f) -> np.ndarray:
    """Diagnostic two-point slope over closed eps-balls.

    ``max |f(y) - f(z)| / d(y, z)`` over distinct ``y, z`` in the closed ball
    of ``x`` (within the support); 0 at isolated points.  Not used by the
    calculus, which is built on one-point difference quotients.
    """
    space = support.space
    f = as_field(space, f)
    out = np.zeros(space.n)
    for x in support.idx:
        nb = support.neighbor_idx(x)
        if len(nb) == 0:
            continue
        ball = np.concatenate([[x], nb])
        d = space.dist[np.ix_(ball, ball)]
        off = ~np.eye(len(ball), dtype=bool)
        out[x] = np.max(np.abs(f[ball][:, None] - f[ball][None, :])[off] / d[off])
    return out


# -- JSON -----------------------------------------------------------------

SPACE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["points", "dist", "weights", "epsilon"],
    "properties": {
        "points": {"type": "array", "minItems": 1,
                   "items": {"type": ["string", "number"]}},
        "dist": {"type": "array",
                 "items": {"type": "array", "items": {"type": "number"}}},
        "weights": {"type": "array", "items": {"type": "number"}},
        "epsilon": {"type": "number"},
    },
}


def space_from_json(doc: Mapping) -> Space:
    return build_space(doc["points"], doc["dist"], doc["weights"], doc["epsilon"])


def space_to_json(space: Space) -> dict:
    return {
        "points": list(space.point_ids),
        "dist": space.dist.tolist(),
        "weights": space.weights.tolist(),
        "epsilon": space.epsilon,
    }
