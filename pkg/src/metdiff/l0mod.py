"""L0-normed modules over finite measure spaces.

A module is a family of finite-dimensional normed fibers, one per point of
a parent space.  Coordinates of all fibers are laid out contiguously
(``offsets`` in CSR style) so elements are flat float arrays and module
maps are block-diagonal sparse matrices.  Block-diagonality is exactly
L0-linearity: multiplying by a scalar field commutes with every map.

Fiber norms are weighted sup, weighted sum or weighted euclidean; their
duals are closed form (sup <-> sum, euclidean <-> euclidean, reciprocal
weights).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (AbsoluteContinuityViolation, BaseMismatch,
                     BoundViolated, CompositionLawViolated,
                     ConjugacyViolated, GeneratorsDoNotSpan,
                     IncompatibleFamily, InconsistentImages, NotASuperset,
                     NotDirected)
from .mmspace import Space, Support

NORM_KINDS = ("sup", "sum", "euclidean")
DUAL_KIND = {"sup": "sum", "sum": "sup", "euclidean": "euclidean"}

# rank / consistency tolerance for certifying induced maps
RANK_TOL = 1e-10
# relative slack when certifying pointwise bounds
BOUND_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Module:
    """An L0(m)-normed module with finite-dimensional fibers.

    Parameters
    ----------
    base : Support
        Carrier of the module; fibers outside it are empty.
    fiber_index : tuple of tuples
        Coordinate labels of the fiber at every point of the parent space.
    norm_kind : {'sup', 'sum', 'euclidean'}
    weights : array, optional
        Positive per-coordinate weights, flat over all fibers.
    """

    base: Support
    fiber_index: tuple
    norm_kind: str = "sup"
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")
        fi = tuple(tuple(f) for f in self.fiber_index)
        if len(fi) != self.base.space.n:
            raise ValueError("fiber_index must list every point of the space")
        object.__setattr__(self, "fiber_index", fi)
        outside = [i for i, f in enumerate(fi) if f and i not in self.base]
        if outside:
            raise ValueError(f"nonempty fibers outside the base at {outside}")
        total = sum(len(f) for f in fi)
        w = np.ones(total) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (total,) or (total and not (w > 0).all()):
            raise ValueError("weights must be positive, one per coordinate")
        object.__setattr__(self, "weights", w)

    @property
    def space(self) -> Space:
        return self.base.space

    @cached_property
    def dims(self) -> np.ndarray:
        return np.array([len(f) for f in self.fiber_index], dtype=np.intp)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(np.intp)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def owner(self) -> np.ndarray:
        """Point index owning each coordinate."""
        return np.repeat(np.arange(len(self.dims)), self.dims)

    @cached_property
    def local(self) -> np.ndarray:
        """Position of each coordinate inside its fiber."""
        return np.arange(self.dim) - self.offsets[self.owner]

    def __eq__(self, other):
        if self is other:
            return True
        return (isinstance(other, Module) and self.base == other.base
                and self.norm_kind == other.norm_kind
                and self.fiber_index == other.fiber_index
                and np.array_equal(self.weights, other.weights))

    __hash__ = object.__hash__

    def same_layout(self, other: "Module") -> bool:
        return self is other or (self.space is other.space
                                 and self.fiber_index == other.fiber_index)

    def fiber_weights(self, i: int) -> np.ndarray:
        return self.weights[self.offsets[i]:self.offsets[i + 1]]

    # element constructors ------------------------------------------------

    def zero(self) -> "Element":
        return Element(self, np.zeros(self.dim))

    def element(self, coords) -> "Element":
        """Element from a flat array, or a mapping ``point id -> vector``."""
        if isinstance(coords, Mapping):
            data = np.zeros(self.dim)
            for pid, vec in coords.items():
                i = self.space.index(pid)
                vec = np.asarray(vec, float)
                if vec.shape != (self.dims[i],):
                    raise ValueError(
                        f"fiber at {pid!r} has dimension {self.dims[i]}, got {vec.shape}")
                data[self.offsets[i]:self.offsets[i + 1]] = vec
            return Element(self, data)
        return Element(self, np.asarray(coords, float))

    def basis_element(self, k: int) -> "Element":
        """Element equal to the k-th fiber basis vector wherever dim > k."""
        return Element(self, (self.local == k).astype(float))

    def basis_family(self) -> list["Element"]:
        top = int(self.dims.max()) if len(self.dims) else 0
        return [self.basis_element(k) for k in range(top)]

    def to_json(self) -> dict:
        ids = self.space.point_ids
        return {
            "base": [ids[i] for i in self.base.idx],
            "fiber_index": {_key(ids[i]): [_key(l) for l in f]
                            for i, f in enumerate(self.fiber_index) if i in self.base},
            "norm_kind": self.norm_kind,
            "weights": {_key(ids[i]): self.fiber_weights(i).tolist()
                        for i in self.base.idx},
        }


def _key(x):
    return x if isinstance(x, (str, int, float)) else str(x)


class Element:
    """An element of a module: flat coordinate array over all fibers."""

    __slots__ = ("module", "data")

    def __init__(self, module: Module, data: np.ndarray):
        data = np.asarray(data, float)
        if data.shape != (module.dim,):
            raise ValueError(
                f"element has {data.shape} coordinates, module has {module.dim}")
        self.module = module
        self.data = data

    def __repr__(self):
        return f"Element(dim={self.module.dim}, kind={self.module.norm_kind})"

    def at(self, i: int) -> np.ndarray:
        o = self.module.offsets
        return self.data[o[i]:o[i + 1]]

    def coords(self) -> dict:
        ids = self.module.space.point_ids
        return {ids[i]: self.at(i).copy() for i in self.module.base.idx}

    def _check(self, other: "Element"):
        if not self.module.same_layout(other.module):
            raise BaseMismatch("elements of different modules")

    def __add__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(self.module, self.data + other.data)

    def __sub__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(self.module, self.data - other.data)

    def __neg__(self) -> "Element":
        return Element(self.module, -self.data)

    def __mul__(self, c: float) -> "Element":
        return Element(self.module, self.data * float(c))

    __rmul__ = __mul__

    def rebase(self, module: Module) -> "Element":
        """Same coordinates viewed in a module with identical layout."""
        if not self.module.same_layout(module):
            raise BaseMismatch("modules have different fiber layouts")
        return Element(module, self.data)

    def to_json(self) -> dict:
        ids = self.module.space.point_ids
        return {"coords": {_key(ids[i]): self.at(i).tolist()
                           for i in self.module.base.idx}}


# -- pointwise norm, scalar multiplication, pairing ----------------------

def _segment_max(values: np.ndarray, module: Module) -> np.ndarray:
    out = np.zeros(len(module.dims))
    nonempty = module.dims > 0
    if nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, module.offsets[:-1][nonempty])
    return out


def _segment_sum(values: np.ndarray, module: Module) -> np.ndarray:
    return np.bincount(module.owner, weights=values, minlength=len(module.dims))


def fiber_norms(data: np.ndarray, module: Module) -> np.ndarray:
    w = module.weights
    if module.norm_kind == "sup":
        return _segment_max(w * np.abs(data), module)
    if module.norm_kind == "sum":
        return _segment_sum(w * np.abs(data), module)
    return np.sqrt(_segment_sum(w * data * data, module))


def pointwise_norm(element: Element) -> np.ndarray:
    """Pointwise norm |v| as a scalar field (0 on empty fibers)."""
    return fiber_norms(element.data, element.module)


def smul(g, element: Element) -> Element:
    """Multiply an element by a scalar field."""
    g = np.asarray(g, float)
    if g.shape != (element.module.space.n,):
        raise BaseMismatch("scalar field lives on a different space")
    return Element(element.module, element.data * g[element.module.owner])


def pair(omega: Element, v: Element) -> np.ndarray:
    """Pointwise duality pairing omega(v)."""
    if not omega.module.same_layout(v.module):
        raise BaseMismatch("pairing needs matching fiber layouts")
    return _segment_sum(omega.data * v.data, v.module)


def dual(module: Module) -> Module:
    return Module(module.base, module.fiber_index, DUAL_KIND[module.norm_kind],
                  1.0 / module.weights)


def ext(module: Module, ambient: Support) -> Module:
    """Extend a module on a restricted measure by zero fibers."""
    if not module.base <= ambient:
        raise NotASuperset("ambient support must contain the module base")
    return Module(ambient, module.fiber_index, module.norm_kind, module.weights)


def norming_element(omega: Element) -> Element:
    """Element v of the dual with |v| <= 1 and omega(v) = |omega| pointwise.

    For sup norms the unit mass sits on the first maximising coordinate.
    """
    m = omega.module
    w = m.weights
    out = np.zeros(m.dim)
    norms = pointwise_norm(omega)
    for i in np.flatnonzero((norms > 0) & (m.dims > 0)):
        s = slice(m.offsets[i], m.offsets[i + 1])
        c, wi = omega.data[s], w[s]
        if m.norm_kind == "sup":
            k = int(np.argmax(wi * np.abs(c)))
            v = np.zeros(len(c))
            v[k] = np.sign(c[k]) * wi[k]
        elif m.norm_kind == "sum":
            v = np.sign(c) * wi
        else:
            v = wi * c / norms[i]
        out[s] = v
    return Element(dual(m), out)


# -- module maps -----------------------------------------------------------

def _dense_op_norm(A: np.ndarray, ks: str, ws: np.ndarray, kt: str,
                   wt: np.ndarray) -> float:
    """Operator norm of one block between weighted fibers."""
    if A.size == 0 or not np.any(A):
        return 0.0
    if ks == "sum":
        cols = _vec_norms(A, kt, wt)
        return float(np.max(cols / ws))
    if kt == "sup":
        rows = _vec_norms(A.T, DUAL_KIND[ks], 1.0 / ws)
        return float(np.max(wt * rows))
    if ks == "euclidean" and kt == "euclidean":
        B = np.sqrt(wt)[:, None] * A / np.sqrt(ws)[None, :]
        return float(np.linalg.norm(B, 2))
    # remaining cases go through vertex enumeration of a polytope ball
    if ks == "sup":
        k = A.shape[1]
        verts = _sign_vertices(k) / ws[None, :]
        return float(np.max(_vec_norms(A @ verts.T, kt, wt)))
    # euclidean -> sum: dualise, target dual ball is a weighted cube
    m = A.shape[0]
    verts = _sign_vertices(m) * wt[None, :]
    return float(np.max(_vec_norms(A.T @ verts.T, "euclidean", 1.0 / ws)))


def _sign_vertices(k: int) -> np.ndarray:
    if k > 20:
        raise NotImplementedError("sup-ball vertex enumeration beyond 20 coordinates")
    return np.array(list(itertools.product((-1.0, 1.0), repeat=k)))


def _vec_norms(cols: np.ndarray, kind: str, w: np.ndarray) -> np.ndarray:
    """Norm of every column of ``cols``."""
    if kind == "sup":
        return np.max(w[:, None] * np.abs(cols), axis=0)
    if kind == "sum":
        return np.sum(w[:, None] * np.abs(cols), axis=0)
    return np.sqrt(np.sum(w[:, None] * cols * cols, axis=0))


class ModuleMap:
    """An L0-linear map: block-diagonal matrix with a certified bound.

    ``bound`` is a scalar field ``l`` with ``|T(v)| <= l |v|``; it is checked
    against the exact pointwise operator norm at construction.  Passing
    ``bound=None`` uses the operator norm itself.
    """

    def __init__(self, source: Module, target: Module, matrix, bound=None,
                 check_structure: bool = True):
        if source.space is not target.space:
            raise BaseMismatch("source and target live on different spaces")
        matrix = sp.csr_matrix(matrix)
        if matrix.shape != (target.dim, source.dim):
            raise ValueError(
                f"matrix shape {matrix.shape} != ({target.dim}, {source.dim})")
        matrix.eliminate_zeros()
        if check_structure and matrix.nnz:
            coo = matrix.tocoo()
            if (target.owner[coo.row] != source.owner[coo.col]).any():
                raise ValueError("matrix couples different points (not L0-linear)")
        self.source = source
        self.target = target
        self.matrix = matrix
        norms = self.op_norm()
        if bound is None:
            self.bound = norms
        else:
            bound = np.broadcast_to(np.asarray(bound, float), norms.shape).copy()
            slack = bound * (1 + BOUND_RTOL) + 1e-300
            bad = np.flatnonzero(norms > slack)
            if len(bad):
                ids = source.space.point_ids
                raise BoundViolated([ids[i] for i in bad])
            self.bound = bound

    def __repr__(self):
        return (f"ModuleMap({self.source.norm_kind}[{self.source.dim}] -> "
                f"{self.target.norm_kind}[{self.target.dim}])")

    @classmethod
    def from_blocks(cls, source: Module, target: Module,
                    blocks: Mapping[int, np.ndarray], bound=None) -> "ModuleMap":
        rows, cols, vals = [], [], []
        for i, B in blocks.items():
            B = np.asarray(B, float)
            if B.shape != (target.dims[i], source.dims[i]):
                raise ValueError(f"block at point {i} has shape {B.shape}")
            r, c = np.nonzero(B)
            rows.append(r + target.offsets[i])
            cols.append(c + source.offsets[i])
            vals.append(B[r, c])
        if rows:
            mat = sp.csr_matrix((np.concatenate(vals),
                                 (np.concatenate(rows), np.concatenate(cols))),
                                shape=(target.dim, source.dim))
        else:
            mat = sp.csr_matrix((target.dim, source.dim))
        return cls(source, target, mat, bound, check_structure=False)

    @classmethod
    def identity(cls, module: Module) -> "ModuleMap":
        return cls(module, module, sp.identity(module.dim, format="csr"),
                   check_structure=False)

    def block(self, i: int) -> np.ndarray:
        t, s = self.target.offsets, self.source.offsets
        return self.matrix[t[i]:t[i + 1], s[i]:s[i + 1]].toarray()

    def __call__(self, v: Element) -> Element:
        if not self.source.same_layout(v.module):
            raise BaseMismatch("element is not in the source module")
        return Element(self.target, self.matrix @ v.data)

    def __matmul__(self, other: "ModuleMap") -> "ModuleMap":
        if not other.target.same_layout(self.source):
            raise BaseMismatch("cannot compose: layouts differ")
        return ModuleMap(other.source, self.target, self.matrix @ other.matrix,
                         check_structure=False)

    def adjoint(self) -> "ModuleMap":
        return ModuleMap(dual(self.target), dual(self.source),
                         self.matrix.T.tocsr(), check_structure=False)

    def with_modules(self, source: Module, target: Module, bound=None) -> "ModuleMap":
        if not (source.same_layout(self.source) and target.same_layout(self.target)):
            raise BaseMismatch("layouts differ")
        return ModuleMap(source, target, self.matrix,
                         self.bound if bound is None else bound,
                         check_structure=False)

    def op_norm(self) -> np.ndarray:
        """Pointwise operator norm of the per-point blocks."""
        src, tgt = self.source, self.target
        n = len(src.dims)
        A = self.matrix
        if src.norm_kind == "sum":
            # column norms in the target norm, divided by source weights
            csc = A.tocsc()
            col = np.repeat(np.arange(src.dim), np.diff(csc.indptr))
            vals = np.abs(csc.data)
            wt = tgt.weights[csc.indices]
            if tgt.norm_kind == "sup":
                cn = np.zeros(src.dim)
                np.maximum.at(cn, col, wt * vals)
            elif tgt.norm_kind == "sum":
                cn = np.bincount(col, weights=wt * vals, minlength=src.dim)
            else:
                cn = np.sqrt(np.bincount(col, weights=wt * vals * vals,
                                         minlength=src.dim))
            return _segment_max(cn / src.weights, src) if src.dim else np.zeros(n)
        if tgt.norm_kind == "sup":
            row = np.repeat(np.arange(tgt.dim), np.diff(A.indptr))
            vals = np.abs(A.data)
            ws = src.weights[A.indices]
            if src.norm_kind == "sup":
                rn = np.bincount(row, weights=vals / ws, minlength=tgt.dim)
            else:
                rn = np.sqrt(np.bincount(row, weights=vals * vals / ws,
                                         minlength=tgt.dim))
            return _segment_max(tgt.weights * rn, tgt) if tgt.dim else np.zeros(n)
        out = np.zeros(n)
        for i in range(n):
            if src.dims[i] and tgt.dims[i]:
                out[i] = _dense_op_norm(self.block(i), src.norm_kind,
                                        src.fiber_weights(i), tgt.norm_kind,
                                        tgt.fiber_weights(i))
        return out

    def max_abs_diff(self, other: "ModuleMap") -> float:
        d = self.matrix - other.matrix
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def equals(self, other: "ModuleMap") -> bool:
        """Exact equality of source, target and matrix."""
        return (self.source == other.source and self.target == other.target
                and self.matrix.shape == other.matrix.shape
                and (self.matrix != other.matrix).nnz == 0)


# -- pullback --------------------------------------------------------------

class Lift:
    """The pullback map v -> [u* v] from a module on Y to its pullback."""

    def __init__(self, original: Module, module: Module, u: np.ndarray,
                 index: np.ndarray):
        self.original = original
        self.module = module
        self.u = u
        self.index = index

    def __call__(self, v: Element) -> Element:
        if not self.original.same_layout(v.module):
            raise BaseMismatch("element is not in the pulled-back module")
        return Element(self.module, v.data[self.index])


def pullback(module: Module, u, nu: Support) -> tuple[Module, Lift]:
    """Pull a module on Y back along ``u: X -> Y`` over the support ``nu``.

    The fiber at ``x`` in ``nu`` is the fiber of ``module`` at ``u(x)``, with
    the same labels, weights and norm, so ``|[u* v]|(x) = |v|(u(x))``.

    Returns
    -------
    module : Module
    lift : Lift
        Callable sending elements of ``module`` to the pullback.
    """
    u = np.asarray(u, dtype=np.intp)
    X = nu.space
    if u.shape != (X.n,):
        raise ValueError("u must assign a target point to every source point")
    bad = [X.point_ids[x] for x in nu.idx if u[x] not in module.base]
    if bad:
        raise AbsoluteContinuityViolation(bad)
    fi = [module.fiber_index[u[x]] if x in nu else () for x in range(X.n)]
    idx = np.concatenate(
        [np.arange(module.offsets[u[x]], module.offsets[u[x] + 1])
         for x in nu.idx] + [np.zeros(0, np.intp)]).astype(np.intp)
    pb = Module(nu, tuple(fi), module.norm_kind, module.weights[idx])
    return pb, Lift(module, pb, u, idx)


def pullback_map(T: ModuleMap, lift_src: Lift, lift_tgt: Lift, bound=None) -> ModuleMap:
    """u*T between pullbacks, block at x equal to the block of T at u(x)."""
    if not (lift_src.original.same_layout(T.source)
            and lift_tgt.original.same_layout(T.target)):
        raise BaseMismatch("lifts do not match the map")
    src, tgt = lift_src.module, lift_tgt.module
    u = lift_src.u
    blocks = {}
    for x in range(src.space.n):
        if src.dims[x] or tgt.dims[x]:
            B = T.block(u[x])
            blocks[x] = B[:tgt.dims[x], :src.dims[x]] if B.size else \
                np.zeros((tgt.dims[x], src.dims[x]))
    if bound is None:
        bound = T.bound[u]
    return ModuleMap.from_blocks(src, tgt, blocks, bound)


def induced_map(pb: tuple[Module, Lift], generators: Sequence[tuple[Element, Element]],
                bound) -> ModuleMap:
    """The unique L0-linear map on a pullback prescribed on generators.

    Parameters
    ----------
    pb : (Module, Lift)
        Output of :func:`pullback`.
    generators : list of (v, image)
        ``v`` in the original module, ``image`` in the target module N.
    bound : scalar field
        ``f`` with ``|image(x)| <= f(x) |v|(u(x))`` for every generator.

    Raises
    ------
    BoundViolated, GeneratorsDoNotSpan, InconsistentImages
    """
    module, lift = pb
    if not generators:
        raise GeneratorsDoNotSpan(list(module.base.ids))
    target = generators[0][1].module
    X = module.space
    ids = X.point_ids
    f = np.broadcast_to(np.asarray(bound, float), (X.n,))
    lifted = [lift(v) for v, _ in generators]
    images = [img for _, img in generators]
    for img in images:
        if not img.module.same_layout(target):
            raise BaseMismatch("generator images live in different modules")
    lhs = np.array([pointwise_norm(img) for img in images])
    rhs = np.array([pointwise_norm(w) for w in lifted]) * f[None, :]
    viol = np.flatnonzero((lhs > rhs * (1 + BOUND_RTOL) + 1e-300).any(axis=0))
    if len(viol):
        raise BoundViolated([ids[i] for i in viol], "generator bound violated")
    Adata = np.array([w.data for w in lifted])      # K x dim(pb)
    Bdata = np.array([img.data for img in images])  # K x dim(N)
    blocks, no_span, inconsistent = {}, [], []
    for x in range(X.n):
        d, m = module.dims[x], target.dims[x]
        if d == 0:
            if m:
                blocks[x] = np.zeros((m, 0))
            continue
        A = Adata[:, module.offsets[x]:module.offsets[x + 1]].T
        B = Bdata[:, target.offsets[x]:target.offsets[x + 1]].T
        # canonical generator order: the result depends on the set only
        order = np.lexsort(np.vstack([A, B])[::-1])
        A, B = A[:, order], B[:, order]
        scale = max(1.0, float(np.abs(A).max()))
        if np.linalg.matrix_rank(A, tol=RANK_TOL * scale) < d:
            no_span.append(ids[x])
            continue
        Tt, *_ = np.linalg.lstsq(A.T, B.T, rcond=None)
        Tx = Tt.T
        resid = np.abs(Tx @ A - B).max() if B.size else 0.0
        if resid > RANK_TOL * max(1.0, float(np.abs(B).max()) if B.size else 1.0):
            inconsistent.append(ids[x])
            continue
        blocks[x] = Tx
    if no_span:
        raise GeneratorsDoNotSpan(no_span)
    if inconsistent:
        raise InconsistentImages(inconsistent)
    return ModuleMap.from_blocks(module, target, blocks, f)


# -- inverse systems and limits --------------------------------------------

LAW_TOL = 1e-12


class InverseSystem:
    """A finite directed family of modules with contraction projections.

    Parameters
    ----------
    index : sequence of hashable
    leq : iterable of pairs (i, j) meaning i <= j
        Reflexive pairs are added automatically; the relation must be a
        partial order (checked).
    modules : mapping index -> Module
    projections : mapping (i, j) -> ModuleMap from modules[j] to modules[i]
        Given for every i <= j; identities may be omitted for i == j.
    """

    def __init__(self, index: Sequence[Hashable], leq: Iterable[tuple],
                 modules: Mapping, projections: Mapping):
        self.index = tuple(index)
        rel = set(leq) | {(i, i) for i in self.index}
        self.leq = frozenset(rel)
        self.modules = dict(modules)
        self.projections = dict(projections)
        self._validate()

    def _validate(self):
        idx, rel = self.index, self.leq
        spaces = {id(m.space) for m in self.modules.values()}
        if len(spaces) != 1:
            raise BaseMismatch("all modules must live over the same space")
        for i, j in rel:
            if i not in self.modules or j not in self.modules:
                raise ValueError(f"order pair {(i, j)!r} refers to unknown index")
            if i != j and (j, i) in rel:
                raise ValueError(f"order is not antisymmetric on {(i, j)!r}")
        for (i, j), (k, l) in itertools.product(rel, rel):
            if j == k and (i, l) not in rel:
                raise ValueError(f"order is not transitive: {i!r} <= {j!r} <= {l!r}")
        for a, b in itertools.combinations(idx, 2):
            if not any((a, c) in rel and (b, c) in rel for c in idx):
                raise NotDirected(f"{a!r} and {b!r} have no upper bound")
        for i in idx:
            ident = ModuleMap.identity(self.modules[i])
            P = self.projections.setdefault((i, i), ident)
            if P.max_abs_diff(ident) != 0:
                raise CompositionLawViolated(f"P[{i!r},{i!r}] is not the identity")
        for i, j in rel:
            if (i, j) not in self.projections:
                raise ValueError(f"missing projection for {i!r} <= {j!r}")
            P = self.projections[(i, j)]
            if not (P.source.same_layout(self.modules[j])
                    and P.target.same_layout(self.modules[i])):
                raise BaseMismatch(f"projection {(i, j)!r} has wrong modules")
            if (P.op_norm() > 1 + BOUND_RTOL).any():
                raise BoundViolated(
                    [P.source.space.point_ids[x]
                     for x in np.flatnonzero(P.op_norm() > 1 + BOUND_RTOL)],
                    f"projection {(i, j)!r} is not a contraction")
        for (i, j), (k, l) in itertools.product(rel, rel):
            if j != k:
                continue
            comp = self.projections[(i, j)].matrix @ self.projections[(j, l)].matrix
            diff = comp - self.projections[(i, l)].matrix
            scale = max(1.0, float(abs(comp).max()) if comp.nnz else 1.0)
            if diff.nnz and np.abs(diff.data).max() > LAW_TOL * scale:
                raise CompositionLawViolated(
                    f"P[{i!r},{j!r}] P[{j!r},{l!r}] != P[{i!r},{l!r}]")

    @cached_property
    def top(self):
        """The greatest index; finite directed posets always have one."""
        for t in self.index:
            if all((i, t) in self.leq for i in self.index):
                return t
        raise NotDirected("no greatest element")

    def constraint_matrix(self) -> sp.csr_matrix:
        """Rows P_j^i v^j - v^i for i < j over the stacked family space."""
        offs = np.cumsum([0] + [self.modules[i].dim for i in self.index])
        pos = {i: k for k, i in enumerate(self.index)}
        total = int(offs[-1])
        blocks = []
        for i, j in sorted(self.leq, key=lambda p: (pos[p[0]], pos[p[1]])):
            if i == j:
                continue
            P = self.projections[(i, j)].matrix
            row = sp.lil_matrix((P.shape[0], total))
            row[:, offs[pos[j]]:offs[pos[j] + 1]] = P
            row[:, offs[pos[i]]:offs[pos[i] + 1]] = -sp.identity(P.shape[0])
            blocks.append(row.tocsr())
        if not blocks:
            return sp.csr_matrix((0, total))
        return sp.vstack(blocks).tocsr()


class InverseLimit:
    """The inverse limit of an :class:`InverseSystem`.

    Limit elements are compatible families ``(v^i)``.  The kernel of the
    compatibility constraints is parametrised by the top block, so the
    limit module reuses the top module's fibers; ``family`` recovers the
    full family and ``norm`` evaluates ``max_i |P^i v|``.
    """

    def __init__(self, system: InverseSystem):
        self.system = system
        t = system.top
        top = system.modules[t]
        self.module = Module(top.base, top.fiber_index, top.norm_kind, top.weights)
        self.projections = {
            i: system.projections[(i, t)].with_modules(self.module, system.modules[i])
            for i in system.index}
        # kernel basis in stacked coordinates, checked against the constraints
        self.kernel = sp.vstack([self.projections[i].matrix
                                 for i in system.index]).tocsr()
        C = system.constraint_matrix()
        resid = C @ self.kernel
        scale = max(1.0, float(abs(self.kernel).max()) if self.kernel.nnz else 1.0)
        if resid.nnz and np.abs(resid.data).max() > LAW_TOL * scale:
            raise CompositionLawViolated("top projections are not compatible")

    def __iter__(self):
        yield self.module
        yield self.projections

    def family(self, v: Element) -> dict:
        return {i: P(v) for i, P in self.projections.items()}

    def norm(self, v: Element) -> np.ndarray:
        """max over the index of |P^i(v)|."""
        return np.max([pointwise_norm(P(v)) for P in self.projections.values()],
                      axis=0)

    def element_from_family(self, fam: Mapping) -> Element:
        """The unique limit element projecting onto a compatible family."""
        sysm = self.system
        for (i, j) in sysm.leq:
            lhs = sysm.projections[(i, j)](fam[j]).data
            rhs = fam[i].data
            scale = max(1.0, float(np.abs(rhs).max()) if rhs.size else 1.0)
            if lhs.size and np.abs(lhs - rhs).max() > LAW_TOL * scale:
                raise IncompatibleFamily(f"family fails P[{i!r},{j!r}]")
        return Element(self.module, fam[sysm.top].data.copy())


def inverse_limit(system: InverseSystem) -> tuple[Module, dict]:
    """Inverse limit module and its projections (see :class:`InverseLimit`)."""
    lim = InverseLimit(system)
    return lim.module, lim.projections


def limit_map(source: InverseSystem, target: InverseSystem,
              maps: Mapping, bound) -> ModuleMap:
    """The map between limits induced by a conjugate family T^i.

    Checks ``T^i P_j^i = Q_j^i T^j`` for all ``i <= j`` and the uniform bound
    ``|T^i v| <= l |v|``; returns T with ``Q^i T = T^i P^i``.
    """
    if set(source.index) != set(target.index) or source.leq != target.leq:
        raise ValueError("systems must share the index set and order")
    for i in source.index:
        Ti = maps[i]
        if not (Ti.source.same_layout(source.modules[i])
                and Ti.target.same_layout(target.modules[i])):
            raise BaseMismatch(f"map {i!r} has wrong modules")
        bad = np.flatnonzero(Ti.op_norm() > np.asarray(bound) * (1 + BOUND_RTOL) + 1e-300)
        if len(bad):
            raise BoundViolated([Ti.source.space.point_ids[x] for x in bad],
                                f"T[{i!r}] exceeds the uniform bound")
    for i, j in source.leq:
        lhs = maps[i].matrix @ source.projections[(i, j)].matrix
        rhs = target.projections[(i, j)].matrix @ maps[j].matrix
        diff = lhs - rhs
        scale = max(1.0, float(abs(lhs).max()) if lhs.nnz else 1.0)
        if diff.nnz and np.abs(diff.data).max() > LAW_TOL * scale:
            raise ConjugacyViolated(f"T[{i!r}] P[{i!r},{j!r}] != Q[{i!r},{j!r}] T[{j!r}]")
    src_lim, tgt_lim = InverseLimit(source), InverseLimit(target)
    t = source.top
    # family w^i = T^i P^i v is compatible; its top block is T^t v
    T = ModuleMap(src_lim.module, tgt_lim.module, maps[t].matrix, bound,
                  check_structure=False)
    for i in source.index:
        lhs = tgt_lim.projections[i].matrix @ T.matrix
        rhs = maps[i].matrix @ src_lim.projections[i].matrix
        diff = lhs - rhs
        if diff.nnz and np.abs(diff.data).max() > LAW_TOL * max(1.0, abs(lhs).max()):
            raise ConjugacyViolated(f"limit map fails to commute at {i!r}")
    return T
