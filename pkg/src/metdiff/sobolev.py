"""Scalar calculus on a finite space: cotangent module, differential, slopes.

The cotangent fiber at ``x`` has one coordinate per neighbour ``y`` (within
the carrier support) and the sup norm; the differential of ``f`` stores the
difference quotients ``(f(y) - f(x)) / d(x, y)``.  Its pointwise norm is the
discrete slope, which plays the role of the minimal weak upper gradient.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import NotNested
from .l0mod import Element, Module, ModuleMap, dual, ext, norming_element, \
    pointwise_norm
from .mmspace import Space, Support, as_field


def cotangent_module(support: Support) -> Module:
    """Edge-indexed sup-norm module over ``support``.

    Fiber labels are the neighbour ids inside the support, in CSR order.
    """
    space = support.space
    ids = space.point_ids
    cols = support.cols
    ip = support.indptr
    fi = tuple(tuple(ids[j] for j in cols[ip[i]:ip[i + 1]]) for i in range(space.n))
    return Module(support, fi, "sup")


def tangent_module(support: Support) -> Module:
    """Dual of the cotangent module (sum norm on edges)."""
    return dual(cotangent_module(support))


def _quotients(support: Support, f: np.ndarray) -> np.ndarray:
    return (f[support.cols] - f[support.rows]) / support.edge_dist


def differential(support: Support, f, module: Module | None = None) -> Element:
    """Covector ``df`` with ``df(x)[y] = (f(y) - f(x)) / d(x, y)``.

    Parameters
    ----------
    support : Support
        Carrier; neighbours are taken inside it.
    f : array or mapping
        Scalar field on the parent space (values off the support unused).
    module : Module, optional
        Cotangent module of ``support`` to reuse.
    """
    f = as_field(support.space, f)
    if module is None:
        module = cotangent_module(support)
    return Element(module, _quotients(support, f))


def mwug(support: Support, f) -> np.ndarray:
    """Discrete slope ``|Df|(x) = max_y |f(y) - f(x)| / d(x, y)``; 0 if isolated."""
    f = as_field(support.space, f)
    return slope_from_edges(support, np.abs(_quotients(support, f)))


def slope_from_edges(support: Support, edge_values: np.ndarray) -> np.ndarray:
    """Per-point max of nonnegative edge values (0 at isolated points)."""
    n = support.space.n
    out = np.zeros(n)
    has = support.degree > 0
    if has.any():
        out[has] = np.maximum.reduceat(edge_values, support.indptr[:-1][has])
    return out


def norming_vector(omega: Element) -> Element:
    """Tangent vector of unit norm attaining ``|omega|`` (first-index ties)."""
    return norming_element(omega)


def selection_matrix(source: Module, target: Module) -> sp.csr_matrix:
    """Coordinate restriction from ``source`` fibers to ``target`` fibers.

    Every label of every target fiber must occur in the source fiber at the
    same point.

    Raises
    ------
    NotNested
    """
    rows, cols = [], []
    ids = source.space.point_ids
    for i in np.flatnonzero(target.dims):
        pos = {lab: k for k, lab in enumerate(source.fiber_index[i])}
        try:
            loc = [pos[lab] for lab in target.fiber_index[i]]
        except KeyError as exc:
            raise NotNested(f"coordinate {exc.args[0]!r} at {ids[i]!r} is not "
                            "present in the larger module") from None
        rows.extend(range(target.offsets[i], target.offsets[i + 1]))
        cols.extend(source.offsets[i] + np.asarray(loc, dtype=np.intp))
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                         shape=(target.dim, source.dim))


def measure_projection(space: Space, E1: Support, E2: Support) -> ModuleMap:
    """Projection ``Ext(cot(E2)) -> Ext(cot(E1))`` for ``E1`` inside ``E2``.

    Each fiber is restricted to the neighbours lying in ``E1``; points of
    ``E2`` outside ``E1`` get the zero fiber.  The map is a contraction and
    sends ``d_{E2} f`` to ``ext(d_{E1} f)``.

    Raises
    ------
    NotNested
    """
    if not (E1.space is space and E2.space is space):
        raise NotNested("supports must live on the given space")
    if not E1 <= E2:
        raise NotNested("E1 must be contained in E2")
    src = ext(cotangent_module(E2), space.full)
    tgt = ext(cotangent_module(E1), space.full)
    return ModuleMap(src, tgt, selection_matrix(src, tgt), bound=1.0,
                     check_structure=False)


def measure_lift(P: ModuleMap) -> ModuleMap:
    """Norm-preserving right inverse of a measure projection.

    Dropped coordinates are filled with zeros; this never raises a sup norm,
    so ``|lift(w)| = |w|`` and ``P(lift(w)) = w``.
    """
    return ModuleMap(P.target, P.source, P.matrix.T.tocsr(), bound=1.0,
                     check_structure=False)
