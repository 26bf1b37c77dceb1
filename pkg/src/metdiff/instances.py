"""Random and hand-built instances for the property suites.

Random metrics are shortest-path completions of graphs with integer edge
weights, and random matrices have small dyadic entries, so most identities
checked on these instances hold bit for bit in floating point.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .l0mod import Element, InverseSystem, Module, ModuleMap
from .metricmap import MetricValuedMap, scalar_map
from .mmspace import Space, build_space
from .sobolev import selection_matrix


def random_metric(rng: np.random.Generator, n: int, max_weight: int = 9) -> np.ndarray:
    """Integer-valued metric from a random connected weighted graph."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(0, k)]
        W[a, b] = W[b, a] = rng.integers(1, max_weight + 1)
    extra = rng.integers(0, n + 1)
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        W[a, b] = W[b, a] = rng.integers(1, max_weight + 1)
    return shortest_path(sp.csr_matrix(W), directed=False)


def dyadic_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(1, 9, size=n) / 4.0


def random_space(rng: np.random.Generator, n: int, prefix: str = "x") -> Space:
    """Random space whose scale leaves no point isolated."""
    d = random_metric(rng, n)
    if n > 1:
        nearest = np.min(d + np.diag(np.full(n, np.inf)), axis=1).max()
        levels = np.unique(d[d >= nearest])
        eps = float(levels[rng.integers(0, min(3, len(levels)))])
    else:
        eps = 1.0
    return build_space([f"{prefix}{i}" for i in range(n)], d, dyadic_weights(rng, n), eps)


def random_map(rng: np.random.Generator, n_x=(5, 30), n_y=(3, 10),
               positive: bool = True, max_tries: int = 200) -> MetricValuedMap:
    """Random map; with ``positive`` the slope is resampled until > 0 everywhere."""
    X = random_space(rng, int(rng.integers(n_x[0], n_x[1] + 1)), "x")
    Y = random_space(rng, int(rng.integers(n_y[0], n_y[1] + 1)), "p")
    for _ in range(max_tries):
        u = MetricValuedMap(X, Y, rng.integers(0, Y.n, size=X.n))
        if not positive or (u.slope > 0).all():
            return u
    raise RuntimeError("could not draw a map with positive slope")


def random_scalar_map(rng: np.random.Generator, n_x=(5, 30)) -> MetricValuedMap:
    """Map into the real line with small integer values."""
    X = random_space(rng, int(rng.integers(n_x[0], n_x[1] + 1)), "x")
    vals = rng.integers(0, max(2, X.n // 2), size=X.n).astype(float)
    return scalar_map(X, vals)


def line_space(n: int, prefix: str = "x", epsilon: float = 1.0) -> Space:
    t = np.arange(n, dtype=float)
    return build_space([f"{prefix}{i}" for i in range(n)],
                       np.abs(t[:, None] - t[None, :]), np.ones(n), epsilon)


def two_point_example() -> MetricValuedMap:
    """X2 -> Y2 with d_X = 1, d_Y = 2, u(a) = p, u(b) = q."""
    X = build_space(["a", "b"], [[0, 1], [1, 0]], [1, 1], 1.0)
    Y = build_space(["p", "q"], [[0, 2], [2, 0]], [1, 1], 1.0)
    return MetricValuedMap(X, Y, {"a": "p", "b": "q"})


def incompatible_example() -> MetricValuedMap:
    """Four points on a path mapped so that one image edge is too long.

    ``a, b -> p``, ``c -> q``, ``d -> r`` with ``d(p,q) = 1``, ``d(q,r) = 2``
    and target scale 1.  The edge ``c -> d`` starts at a positive-slope
    point and its image ``q -> r`` is longer than the target scale.
    """
    t = np.arange(4, dtype=float)
    X = build_space(list("abcd"), np.abs(t[:, None] - t[None, :]), np.ones(4), 1.0)
    Y = build_space(list("pqr"), [[0, 1, 3], [1, 0, 2], [3, 2, 0]], np.ones(3), 1.0)
    return MetricValuedMap(X, Y, {"a": "p", "b": "p", "c": "q", "d": "r"},
                           target_epsilon=1.0)


def random_target_measure(rng: np.random.Generator, u: MetricValuedMap,
                          extra: float = 0.5) -> np.ndarray:
    """Positive dyadic weights on supp mu plus a random set of other points."""
    m = np.zeros(u.target.n)
    supp = u.mu_support.mask
    m[supp] = dyadic_weights(rng, int(supp.sum()))
    others = np.flatnonzero(~supp)
    pick = others[rng.random(len(others)) < extra]
    m[pick] = dyadic_weights(rng, len(pick))
    return m


def random_cover(rng: np.random.Generator, space: Space) -> list[frozenset]:
    """Two incomparable proper subsets covering the space, plus the whole space.

    Sets are returned as frozensets of point ids.
    """
    n = space.n
    ids = space.point_ids
    if n < 2:
        return [frozenset(ids)]
    perm = rng.permutation(n)
    k = int(rng.integers(1, n))
    a = set(perm[:k].tolist())
    b = set(perm[k:].tolist())
    overlap = rng.choice(n, size=int(rng.integers(0, n // 2 + 1)), replace=False)
    for i in overlap:
        (a if rng.random() < 0.5 else b).add(int(i))
    if a >= b or b >= a:
        a, b = set(perm[:k].tolist()), set(perm[k:].tolist())
    return [frozenset(ids[i] for i in a), frozenset(ids[i] for i in b), frozenset(ids)]


# -- modules -----------------------------------------------------------------

def random_module(rng: np.random.Generator, space: Space, max_dim: int = 3,
                  kind: str | None = None, base=None) -> Module:
    if base is None:
        base = space.full
    kind = kind or str(rng.choice(["sup", "sum", "euclidean"]))
    dims = [int(rng.integers(0, max_dim + 1)) if i in base else 0
            for i in range(space.n)]
    fi = tuple(tuple(range(d)) for d in dims)
    w = dyadic_weights(rng, sum(dims))
    return Module(base, fi, kind, w)


def random_element(rng: np.random.Generator, module: Module) -> Element:
    return Element(module, rng.integers(-8, 9, size=module.dim) / 4.0)


def random_contraction(rng: np.random.Generator, source: Module,
                       target: Module) -> ModuleMap:
    """Dyadic block-diagonal map scaled by a power of 2 to norm <= 1."""
    blocks = {i: rng.integers(-4, 5, size=(target.dims[i], source.dims[i])) / 4.0
              for i in range(source.space.n) if source.dims[i] or target.dims[i]}
    T = ModuleMap.from_blocks(source, target, blocks)
    norms = T.op_norm()
    top = float(norms.max()) if norms.size else 0.0
    if top > 1:
        T = ModuleMap(source, target, T.matrix / 2.0 ** np.ceil(np.log2(top)),
                      check_structure=False)
    return T


def random_tree_system(rng: np.random.Generator, space: Space, size: int) -> InverseSystem:
    """Index 0 is the top; every other index has a parent of lower label."""
    kind = str(rng.choice(["sup", "sum", "euclidean"]))
    mods = {i: random_module(rng, space, kind=kind) for i in range(size)}
    parent = {i: int(rng.integers(0, i)) for i in range(1, size)}
    ancestors = {0: [0]}
    for i in range(1, size):
        ancestors[i] = [i] + ancestors[parent[i]]
    step = {i: random_contraction(rng, mods[parent[i]], mods[i]) for i in range(1, size)}
    proj = {}
    for i in range(size):
        P = ModuleMap.identity(mods[i])
        proj[(i, i)] = P
        for j in ancestors[i][1:]:
            # ancestors[i] lists i, parent(i), ...; extend the path upward
            prev = ancestors[i][ancestors[i].index(j) - 1]
            P = P @ step[prev]
            proj[(i, j)] = P
    leq = [(i, j) for i in range(size) for j in ancestors[i]]
    return InverseSystem(range(size), leq, mods, proj)


def random_diamond_system(rng: np.random.Generator, space: Space) -> InverseSystem:
    """bottom <= left, right <= top with coordinate restrictions."""
    kind = str(rng.choice(["sup", "sum", "euclidean"]))
    top = random_module(rng, space, max_dim=4, kind=kind)
    left_f, right_f, bot_f = [], [], []
    for f in top.fiber_index:
        keep_l = [c for c in f if rng.random() < 0.7]
        keep_r = [c for c in f if rng.random() < 0.7]
        left_f.append(tuple(keep_l))
        right_f.append(tuple(keep_r))
        bot_f.append(tuple(c for c in f if c in keep_l and c in keep_r))

    def sub(fi):
        w = np.concatenate([top.fiber_weights(i)[list(f)] for i, f in enumerate(fi)]
                           + [np.zeros(0)])
        return Module(top.base, tuple(fi), kind, w)

    mods = {"top": top, "left": sub(left_f), "right": sub(right_f), "bottom": sub(bot_f)}
    leq = [("bottom", "left"), ("bottom", "right"), ("left", "top"),
           ("right", "top"), ("bottom", "top")]
    proj = {(i, j): ModuleMap(mods[j], mods[i], selection_matrix(mods[j], mods[i]),
                              check_structure=False) for i, j in leq}
    return InverseSystem(list(mods), leq, mods, proj)


def random_system(rng: np.random.Generator, space: Space) -> InverseSystem:
    if rng.random() < 0.3:
        return random_diamond_system(rng, space)
    return random_tree_system(rng, space, int(rng.integers(3, 6)))
