"""Grid samplings of R^d and the metric differential of Lipschitz maps.

For a map ``u`` from a box of R^d into a normed space the metric
differential at ``x`` is the seminorm ``v -> |J(x) v|``.  On an axis grid
with step ``h`` the differential ``du`` applied to the unit field along
``+e_i`` has pointwise norm ``|u(x + h e_i) - u(x)| / h``; this module
measures how fast that quotient converges to ``|J(x) e_i|`` as ``h``
halves.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .differential import build_du
from .errors import OutOfDomain
from .l0mod import Element, pointwise_norm
from .metricmap import MetricValuedMap
from .mmspace import Space, space_from_coords

DEFAULT_STEPS = (1 / 16, 1 / 32, 1 / 64)
DEFAULT_N = 17
# errors below this are treated as exact when estimating orders
EXACT_FLOOR = 1e-12


@dataclass(frozen=True)
class GridSpace:
    """Axis grid of ``n**d`` nodes with step ``h`` centred at ``center``.

    The grid is the patch ``center + h * (k - (n - 1) / 2)``, which stays in
    the unit cube for the default sizes.  Weights are ``h**d`` and the scale
    ``h (1 + 1e-9)`` keeps only axis neighbours.
    """

    d: int
    n: int = DEFAULT_N
    h: float = 1 / 16
    center: float = 0.5

    @cached_property
    def coords(self) -> np.ndarray:
        t = self.center + self.h * (np.arange(self.n) - (self.n - 1) / 2)
        mesh = np.meshgrid(*([t] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def space(self) -> Space:
        N = self.n ** self.d
        return space_from_coords(range(N), self.coords, np.full(N, self.h ** self.d),
                                 epsilon=self.h * (1 + 1e-9), p=2.0)

    @cached_property
    def multi_index(self) -> np.ndarray:
        grids = np.meshgrid(*([np.arange(self.n)] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def strides(self) -> np.ndarray:
        return self.n ** np.arange(self.d - 1, -1, -1)

    @cached_property
    def interior(self) -> np.ndarray:
        k = self.multi_index
        return np.flatnonzero(((k > 0) & (k < self.n - 1)).all(axis=1))


@dataclass(frozen=True)
class MapEntry:
    """A Lipschitz map from R^d into ``(R^k, l^p)`` with its Jacobian."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    p: float
    linear: bool
    lipschitz: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.func(np.atleast_2d(x))


def _norm(z: np.ndarray, p: float) -> np.ndarray:
    if p == 1:
        return np.abs(z).sum(axis=-1)
    if np.isinf(p):
        return np.abs(z).max(axis=-1)
    return np.sqrt((z * z).sum(axis=-1))


def _linear(name: str, A: np.ndarray, p: float) -> MapEntry:
    A = np.asarray(A, float)
    k, d = A.shape
    if p == 2:
        lip = float(np.linalg.norm(A, 2))
    elif p == 1:
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * k))).reshape(k, -1).T
        lip = float(np.max(np.linalg.norm(signs @ A, axis=1)))
    else:
        lip = float(np.max(np.linalg.norm(A, axis=1)))
    return MapEntry(name, lambda x: x @ A.T,
                    lambda x: np.broadcast_to(A, (len(np.atleast_2d(x)), k, d)),
                    p, True, lip)


def catalog(d: int) -> list[MapEntry]:
    """Catalog of maps on R^d with closed-form metric differentials."""
    e1 = np.zeros(d)
    e1[0] = 1.0

    def quad(x):
        return np.stack([x[:, 0] ** 2, x[:, 0]], axis=1)

    def quad_jac(x):
        x = np.atleast_2d(x)
        J = np.zeros((len(x), 2, d))
        J[:, 0, 0] = 2 * x[:, 0]
        J[:, 1, 0] = 1.0
        return J

    def circle(x):
        return np.concatenate([np.cos(2 * x[:, :1]), np.sin(2 * x[:, :1]), x[:, 1:]], axis=1)

    def circle_jac(x):
        x = np.atleast_2d(x)
        J = np.zeros((len(x), d + 1, d))
        J[:, 0, 0] = -2 * np.sin(2 * x[:, 0])
        J[:, 1, 0] = 2 * np.cos(2 * x[:, 0])
        for i in range(1, d):
            J[:, i + 1, i] = 1.0
        return J

    l1 = np.array([[1.0, -2.0, 1.0], [0.0, 1.0, 3.0]])[:, :d]
    linf = np.array([[2.0, 1.0, 0.0], [-1.0, 1.0, 1.0], [0.0, 0.5, -2.0]])[:, :d]
    return [
        _linear("identity", np.eye(d), 2),
        _linear("diag_2_3", np.diag([2.0, 3.0, 4.0][:d]), 2),
        _linear("linear_l1", l1, 1),
        _linear("linear_linf", linf, np.inf),
        MapEntry("square_line", quad, quad_jac, 2, False, math.sqrt(5.0)),
        MapEntry("circle", circle, circle_jac, 2, False, 2.0),
        MapEntry("constant", lambda x: np.zeros((len(x), 1)),
                 lambda x: np.zeros((len(np.atleast_2d(x)), 1, d)), 2, True, 0.0),
    ]


def get_entry(name: str, d: int) -> MapEntry:
    for e in catalog(d):
        if e.name == name:
            return e
    raise KeyError(name)


def verify_lipschitz(entry: MapEntry, d: int, n_pairs: int = 2000, seed=0) -> float:
    """Largest sampled quotient divided by the declared constant."""
    rng = np.random.default_rng(seed)
    a, b = rng.random((n_pairs, d)), rng.random((n_pairs, d))
    q = _norm(entry(a) - entry(b), entry.p) / np.linalg.norm(a - b, axis=1)
    if entry.lipschitz == 0:
        return 0.0 if np.all(q == 0) else np.inf
    return float(q.max() / entry.lipschitz)


def _check_domain(x: np.ndarray):
    if (x < 0).any() or (x > 1).any():
        raise OutOfDomain(f"point {x.tolist()} is outside the unit cube")


def md_closed(entry: MapEntry, x, v) -> float:
    """Metric differential ``|J(x) v|_p``."""
    x, v = np.asarray(x, float), np.asarray(v, float)
    J = entry.jacobian(x[None, :])[0]
    return float(_norm(J @ v, entry.p))


def md_estimate(entry: MapEntry, x, v, t: float) -> float:
    """Difference quotient ``|u(x + t v) - u(x)| / t``.

    Raises
    ------
    OutOfDomain
    """
    if not t > 0:
        raise ValueError("t must be positive")
    x, v = np.asarray(x, float), np.asarray(v, float)
    _check_domain(x)
    _check_domain(x + t * v)
    return float(_norm(entry(x + t * v) - entry(x), entry.p)[0] / t)


def grid_map(entry: MapEntry, grid: GridSpace) -> MetricValuedMap:
    """Restriction of ``entry`` to the grid; equal images are merged."""
    img = entry(grid.coords)
    uniq, inv = np.unique(img, axis=0, return_inverse=True)
    target = space_from_coords(range(len(uniq)), uniq, np.ones(len(uniq)),
                               epsilon=1.0, p=entry.p)
    return MetricValuedMap(grid.space, target, inv.reshape(-1))


def axis_field(grid: GridSpace, du, axis: int) -> tuple[Element, np.ndarray]:
    """Unit tangent field along ``+e_axis`` and the nodes where it lives."""
    S = grid.space.full
    k = grid.multi_index
    nodes = grid.interior
    nodes = nodes[k[nodes, axis] < grid.n - 1]
    nxt = nodes + grid.strides[axis]
    found, pos = S.edge_position(nodes, nxt)
    if not found.all():
        raise RuntimeError("grid neighbour missing from the edge structure")
    data = np.zeros(du.tangent.dim)
    data[pos] = 1.0
    return Element(du.tangent, data), nodes


@dataclass
class AxisError:
    entry: str
    d: int
    h: float
    direction: int
    max_error: float
    empirical_order: float = float("nan")


def compare_md_du(entry: MapEntry, grid: GridSpace) -> list[AxisError]:
    """Max error of ``|du(e_i)|`` against ``md(u, x)(e_i)`` at interior nodes."""
    u = grid_map(entry, grid)
    du = build_du(u)
    out = []
    for i in range(grid.d):
        v, nodes = axis_field(grid, du, i)
        got = pointwise_norm(du(v))[nodes]
        J = entry.jacobian(grid.coords[nodes])
        want = _norm(J[:, :, i], entry.p)
        out.append(AxisError(entry.name, grid.d, grid.h, i,
                             float(np.max(np.abs(got - want), initial=0.0))))
    return out


def convergence_table(entry: MapEntry, d: int, steps: Sequence[float] = DEFAULT_STEPS,
                      n: int = DEFAULT_N) -> list[AxisError]:
    """Errors for every step and direction with orders between successive steps.

    The order is ``log2(err(h) / err(h/2))`` reported on the finer row; it is
    ``inf`` when the finer error is below the exactness floor and ``nan`` on
    the coarsest row.
    """
    rows = [compare_md_du(entry, GridSpace(d, n, h)) for h in steps]
    for prev, cur in zip(rows, rows[1:]):
        for a, b in zip(prev, cur):
            if b.max_error <= EXACT_FLOOR:
                b.empirical_order = float("inf")
            elif a.max_error <= EXACT_FLOOR:
                b.empirical_order = float("-inf")
            else:
                b.empirical_order = math.log(a.max_error / b.max_error) / math.log(
                    prev[0].h / cur[0].h)
    return [r for block in rows for r in block]


def kirchheim_rows(dims: Sequence[int] = (1, 2, 3), steps=DEFAULT_STEPS,
                   n: int = DEFAULT_N) -> list[AxisError]:
    rows = []
    for d in dims:
        for entry in catalog(d):
            rows.extend(convergence_table(entry, d, steps, n))
    return rows


def rows_to_csv(rows: Sequence[AxisError]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["entry", "h", "direction", "max_error", "empirical_order"])
    for r in rows:
        w.writerow([f"{r.entry}_d{r.d}", repr(r.h), r.direction,
                    f"{r.max_error:.6e}", f"{r.empirical_order:.6f}"])
    return buf.getvalue()


def judge_rows(rows: Sequence[AxisError], entries: dict[str, MapEntry] | None = None,
               linear_tol: float = 1e-9, min_order: float = 0.9) -> list[str]:
    """Failures: linear entries above ``linear_tol``; others below ``min_order``."""
    bad = []
    for r in rows:
        linear = _is_linear(r.entry, r.d) if entries is None else entries[r.entry].linear
        if linear:
            if r.max_error > linear_tol:
                bad.append(f"{r.entry} d={r.d} h={r.h} axis={r.direction}: "
                           f"error {r.max_error:.3e} > {linear_tol}")
        elif not math.isnan(r.empirical_order) and r.empirical_order < min_order:
            bad.append(f"{r.entry} d={r.d} h={r.h} axis={r.direction}: "
                       f"order {r.empirical_order:.3f} < {min_order}")
    return bad


def _is_linear(name: str, d: int) -> bool:
    return get_entry(name, d).linear


@dataclass
class SeminormReport:
    tolerance: float
    discretization_error: float
    homogeneity: float
    subadditivity: float

    @property
    def passed(self) -> bool:
        return self.homogeneity <= self.tolerance and self.subadditivity <= self.tolerance


def seminorm_check(entry: MapEntry, x, directions, t: float,
                   scales: Sequence[float] = (0.0, 0.5, -1.0, 2.0)) -> SeminormReport:
    """Homogeneity and subadditivity of the estimated metric differential.

    The tolerance is ten times the largest observed gap between the
    difference quotient and the closed form over every sampled direction
    (with a floor of 1e-12).
    """
    x = np.asarray(x, float)
    V = np.atleast_2d(np.asarray(directions, float))
    probes = [s * v for v in V for s in (1.0, *scales)]
    probes += [a + b for a in V for b in V]
    err = max(abs(md_estimate(entry, x, v, t) - md_closed(entry, x, v)) for v in probes)
    tol = max(10 * err, EXACT_FLOOR)
    hom = 0.0
    for v in V:
        base = md_estimate(entry, x, v, t)
        for s in scales:
            hom = max(hom, abs(md_estimate(entry, x, s * v, t) - abs(s) * base))
    sub = 0.0
    for a in V:
        for b in V:
            excess = (md_estimate(entry, x, a + b, t) - md_estimate(entry, x, a, t)
                      - md_estimate(entry, x, b, t))
            sub = max(sub, excess)
    return SeminormReport(tol, err, hom, sub)
