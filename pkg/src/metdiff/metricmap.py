"""Maps between finite metric spaces and their slope calculus.

A :class:`MetricValuedMap` is an index assignment ``u: X -> Y``.  Its slope
``|Du|`` uses the same one-point difference quotients as scalar fields, now
measured with the target distance.  The pushforward ``mu = u#(|Du|^2 m)``
lives on the target; the target cotangent module used by the differential is
computed inside ``supp mu`` at scale ``eps_Y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .l0mod import Element
from .mmspace import (SPACE_SCHEMA, Space, Support, as_field, build_space,
                      random_one_lipschitz, space_from_coords, space_to_json)
from .sobolev import cotangent_module, differential, slope_from_edges


@dataclass(frozen=True)
class PushforwardMeasure:
    mass: np.ndarray
    support: Support

    @property
    def total(self) -> float:
        return float(self.mass.sum())


@dataclass(frozen=True)
class CompatibilityReport:
    """Edges ``(x, y)`` from positive-slope points whose image is not a
    neighbour of ``u(x)`` inside ``supp mu``."""

    violations: tuple

    @property
    def compatible(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"compatible": self.compatible,
                "violations": [list(e) for e in self.violations]}


class MetricValuedMap:
    """A map ``u: X -> Y`` between finite metric spaces.

    Parameters
    ----------
    source, target : Space
    assignment : array of int or mapping
        Target index per source point, or ``source id -> target id``.
    target_epsilon : float, optional
        Neighbourhood scale on the target.  Defaults to the longest image
        of a source edge, which makes every image edge representable.
    """

    def __init__(self, source: Space, target: Space, assignment,
                 target_epsilon: float | None = None):
        if isinstance(assignment, Mapping):
            u = np.array([target.index(assignment[pid]) for pid in source.point_ids],
                         dtype=np.intp)
        else:
            u = np.asarray(assignment, dtype=np.intp)
        if u.shape != (source.n,) or (u < 0).any() or (u >= target.n).any():
            raise ValueError("assignment must map every source point into the target")
        if target_epsilon is not None and not target_epsilon > 0:
            raise ValueError("target_epsilon must be positive")
        self.source = source
        self.target = target
        self.u = u
        self.target_epsilon = target_epsilon
        self.u.setflags(write=False)

    def __repr__(self):
        return f"MetricValuedMap({self.source.n} -> {self.target.n} points)"

    @cached_property
    def edge_image_dist(self) -> np.ndarray:
        S = self.source.full
        return self.target.distance(self.u[S.rows], self.u[S.cols])

    @cached_property
    def slope(self) -> np.ndarray:
        S = self.source.full
        return slope_from_edges(S, self.edge_image_dist / S.edge_dist)

    @cached_property
    def eps_y(self) -> float:
        if self.target_epsilon is not None:
            return float(self.target_epsilon)
        moving = self.edge_image_dist[self.edge_image_dist > 0]
        return float(moving.max()) if len(moving) else float(self.target.epsilon)

    @cached_property
    def target_space(self) -> Space:
        """The target with neighbourhood scale ``eps_y``."""
        return self.target.with_epsilon(self.eps_y)

    @cached_property
    def pushforward(self) -> PushforwardMeasure:
        mass = np.bincount(self.u, weights=self.slope ** 2 * self.source.weights,
                           minlength=self.target.n)
        supp = self.target_space.support_idx(np.flatnonzero(mass > 0))
        return PushforwardMeasure(mass, supp)

    @property
    def mu_support(self) -> Support:
        return self.pushforward.support

    @cached_property
    def positive(self) -> Support:
        """``{|Du| > 0}`` as a support of the source."""
        return self.source.support_idx(np.flatnonzero(self.slope > 0))

    @cached_property
    def representable(self) -> np.ndarray:
        """Per source edge: image equal to u(x) or a supp-mu neighbour of u(x)."""
        S = self.source.full
        p, q = self.u[S.rows], self.u[S.cols]
        found, _ = self.mu_support.edge_position(p, q)
        return (p == q) | found

    @cached_property
    def compatibility(self) -> CompatibilityReport:
        S = self.source.full
        bad = ~self.representable & (self.slope[S.rows] > 0)
        ids = self.source.point_ids
        return CompatibilityReport(tuple((ids[x], ids[y]) for x, y in
                                         zip(S.rows[bad], S.cols[bad])))

    def lipschitz_constant(self) -> float:
        X = self.source
        if X.n < 2:
            return 0.0
        dy = self.target.dist[np.ix_(self.u, self.u)]
        off = ~np.eye(X.n, dtype=bool)
        return float(np.max(dy[off] / X.dist[off]))

    def compose(self, f) -> np.ndarray:
        """Scalar field ``f o u`` on the source."""
        return as_field(self.target, f)[self.u]


def mdug_slope(u: MetricValuedMap) -> np.ndarray:
    """``|Du|(x) = max_y d_Y(u(x), u(y)) / d_X(x, y)``; 0 at isolated points."""
    return u.slope.copy()


def oracle_family(u: MetricValuedMap, n_random: int = 50, seed=0) -> np.ndarray:
    """1-Lipschitz test functions on the target, one per row.

    Distance functions to every target point followed by ``n_random``
    McShane-random fields.
    """
    Y = u.target
    rows = [Y.dist[q] for q in range(Y.n)]
    children = np.random.SeedSequence(seed).spawn(n_random)
    rows += [random_one_lipschitz(Y, c) for c in children]
    return np.array(rows)


def family_slopes(u: MetricValuedMap, family: np.ndarray) -> np.ndarray:
    """``mwug(f o u)`` for every row ``f`` of ``family``."""
    S = u.source.full
    G = family[:, u.u]
    q = np.abs(G[:, S.cols] - G[:, S.rows]) / S.edge_dist
    out = np.zeros((len(family), u.source.n))
    has = S.degree > 0
    if has.any():
        out[:, has] = np.maximum.reduceat(q, S.indptr[:-1][has], axis=1)
    return out


def mdug_oracle(u: MetricValuedMap, n_random: int = 50, seed=0) -> np.ndarray:
    """Pointwise sup of ``mwug(f o u)`` over a finite 1-Lipschitz family."""
    return family_slopes(u, oracle_family(u, n_random, seed)).max(axis=0)


def pushforward(u: MetricValuedMap) -> PushforwardMeasure:
    return u.pushforward


def compatibility(u: MetricValuedMap) -> CompatibilityReport:
    return u.compatibility


def target_cotangent(u: MetricValuedMap):
    """Cotangent module of ``(Y, mu)`` at scale ``eps_y``."""
    return cotangent_module(u.mu_support)


def pullback_differential(u: MetricValuedMap, f, source_module=None) -> Element:
    """Covector ``dg`` on the source for ``g = f o u`` on ``{|Du| > 0}``.

    Only the values of ``f`` on ``supp mu`` are read.  Non-representable
    edges and points with ``|Du| = 0`` carry zero coordinates.
    """
    f = as_field(u.target, f).copy()
    f[~u.mu_support.mask] = 0.0
    S = u.source.full
    g = f[u.u]
    q = (g[S.cols] - g[S.rows]) / S.edge_dist
    keep = u.representable & (u.slope[S.rows] > 0)
    q[~keep] = 0.0
    if source_module is None:
        source_module = cotangent_module(S)
    return Element(source_module, q)


def mu_differential(u: MetricValuedMap, f) -> Element:
    """``d_mu f``: differential of ``f`` on ``supp mu`` at scale ``eps_y``."""
    return differential(u.mu_support, f)


def scalar_map(source: Space, values) -> MetricValuedMap:
    """Map into the real line, target made of the distinct values."""
    vals = as_field(source, values)
    uniq, inv = np.unique(vals, return_inverse=True)
    target = space_from_coords([float(v) for v in uniq], uniq, np.ones(len(uniq)),
                               epsilon=1.0, p=1.0)
    return MetricValuedMap(source, target, inv.reshape(-1))


# -- JSON -----------------------------------------------------------------

MAP_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["source", "target", "map"],
    "properties": {
        "source": SPACE_SCHEMA,
        "target": SPACE_SCHEMA,
        "map": {"type": "object"},
        "target_epsilon": {"type": ["number", "null"]},
    },
}


def _lookup(space: Space, key):
    # JSON object keys are strings; accept numeric labels written as keys
    if key in space._index:
        return key
    for pid in space.point_ids:
        if str(pid) == str(key):
            return pid
    raise KeyError(key)


def map_from_json(doc: Mapping) -> MetricValuedMap:
    X = build_space(**{k: doc["source"][k] for k in ("points", "dist", "weights", "epsilon")})
    Y = build_space(**{k: doc["target"][k] for k in ("points", "dist", "weights", "epsilon")})
    raw = doc["map"]
    missing = [p for p in X.point_ids if str(p) not in {str(k) for k in raw}]
    if missing:
        raise ValueError(f"map is not total: missing {missing!r}")
    by_str = {str(k): v for k, v in raw.items()}
    assign = {p: _lookup(Y, by_str[str(p)]) for p in X.point_ids}
    return MetricValuedMap(X, Y, assign, doc.get("target_epsilon"))


def map_to_json(u: MetricValuedMap) -> dict:
    X, Y = u.source, u.target
    return {
        "source": space_to_json(X),
        "target": space_to_json(Y),
        "map": {str(X.point_ids[i]): Y.point_ids[u.u[i]] for i in range(X.n)},
        "target_epsilon": u.target_epsilon,
    }
