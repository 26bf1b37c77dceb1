"""The differential du of a map between finite metric spaces.

At a point ``x`` with ``|Du|(x) > 0`` the matrix ``D(x)`` sends the source
edge ``y`` to the target edge ``u(y)`` of ``u(x)`` with weight
``d_Y(u(x), u(y)) / d_X(x, y)``.  Columns for edges that collapse
(``u(y) = u(x)``) or are not representable in the target cotangent fiber are
zero.  Its sum-to-sum operator norm is the largest column sum, i.e. the slope
over representable edges.

The consistency checks compare ``du`` against other constructions of the
same object: the scalar differential when ``Y`` is a subset of the line,
the differential taken with respect to a larger target measure, and the
inverse-limit construction over a cover of ``X``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DominationFailure, NotACover, TargetNotScalar
from .l0mod import (Element, InverseSystem, Module, ModuleMap, dual, ext,
                    induced_map, limit_map, pair, pointwise_norm, pullback)
from .metricmap import (CompatibilityReport, MetricValuedMap,
                        pullback_differential)
from .mmspace import Space, Support, random_one_lipschitz
from .sobolev import (cotangent_module, differential, measure_projection,
                      mwug, selection_matrix, tangent_module)

# tolerance for identities that hold exactly in real arithmetic but go
# through one or two float divisions
EXACT_RTOL = 1e-12


def _edge_matrix(u: MetricValuedMap, tgt_support: Support, nu: Support,
                 tangent: Module, codomain: Module) -> sp.csr_matrix:
    """Matrix of the edge map x -> u(x) with target fibers over ``tgt_support``."""
    S = u.source.full
    p, q = u.u[S.rows], u.u[S.cols]
    found, pos = tgt_support.edge_position(p, q)
    keep = found & (p != q) & nu.mask[S.rows]
    e = np.flatnonzero(keep)
    rows = codomain.offsets[S.rows[e]] + (pos[e] - tgt_support.indptr[p[e]])
    cols = tangent.offsets[S.rows[e]] + (e - S.indptr[S.rows[e]])
    vals = u.edge_image_dist[e] / S.edge_dist[e]
    return sp.csr_matrix((vals, (rows, cols)), shape=(codomain.dim, tangent.dim))


class Differential:
    """``du`` as a module map from the tangent module of X.

    The codomain is ``Ext(dual(u* cot(Y, mu)))``: at ``x`` with
    ``|Du|(x) > 0`` its fiber is indexed by the supp-mu neighbours of
    ``u(x)``; elsewhere it is empty.
    """

    def __init__(self, u: MetricValuedMap):
        self.u = u
        X = u.source
        self.cot_x = cotangent_module(X.full)
        self.tangent = dual(self.cot_x)
        self.cot_mu = cotangent_module(u.mu_support)
        self.pb, self.lift = pullback(self.cot_mu, u.u, u.positive)
        self.pb_ext = ext(self.pb, X.full)
        self.codomain = dual(self.pb_ext)
        mat = _edge_matrix(u, u.mu_support, u.positive, self.tangent, self.codomain)
        self.map = ModuleMap(self.tangent, self.codomain, mat, bound=u.slope,
                             check_structure=False)

    @property
    def compatibility(self) -> CompatibilityReport:
        return self.u.compatibility

    def __call__(self, v: Element) -> Element:
        return self.map(v)

    def block(self, pid) -> np.ndarray:
        return self.map.block(self.u.source.index(pid))

    def op_norm(self) -> np.ndarray:
        return self.map.op_norm()

    def lifted_differential(self, f) -> Element:
        """``ext([u* d_mu f])`` in the predual of the codomain."""
        dmu = differential(self.u.mu_support, f, self.cot_mu)
        return self.lift(dmu).rebase(self.pb_ext)

    def pairing_residual(self, f, vs: Iterable[Element]) -> float:
        """max |<[u* d_mu f], du(v)> - dg(v)| over the given tangent fields."""
        w = self.lifted_differential(f)
        dg = pullback_differential(self.u, f, self.cot_x)
        res = 0.0
        for v in vs:
            lhs = pair(w.rebase(self.codomain), self.map(v).rebase(self.codomain))
            rhs = pair(dg.rebase(self.tangent), v)
            res = max(res, float(np.max(np.abs(lhs - rhs), initial=0.0)))
        return res


def build_du(u: MetricValuedMap) -> Differential:
    return Differential(u)


def op_norm(du: Differential) -> np.ndarray:
    return du.op_norm()


# -- reports ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    max_residual: float = 0.0
    residuals: list | None = None
    detail: str = ""


@dataclass
class Report:
    kind: str
    checks: list = field(default_factory=list)
    compatibility: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name: str, residuals, tol: float, detail: str = "",
            ids: Sequence | None = None) -> Check:
        r = np.atleast_1d(np.asarray(residuals, float))
        worst = float(r.max()) if r.size else 0.0
        per_point = None
        if ids is not None and r.shape == (len(ids),):
            per_point = [[_jsonable(i), float(x)] for i, x in zip(ids, r)]
        c = Check(name, bool(worst <= tol), worst, per_point, detail)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {"kind": self.kind, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks],
                "compatibility": self.compatibility, "extra": self.extra}


def _jsonable(x):
    return x if isinstance(x, (str, int, float)) else str(x)


def tangent_basis(du: Differential) -> list[Element]:
    return du.tangent.basis_family()


def norm_identity(u: MetricValuedMap, du: Differential | None = None) -> Report:
    """``|du| = |Du|`` (equality on compatible instances, inequality always)."""
    du = du or build_du(u)
    rep = Report("norm", compatibility=u.compatibility.to_dict())
    gap = u.slope - du.op_norm()
    ids = u.source.point_ids
    rep.add("op_norm_le_slope", np.maximum(-gap, 0.0), 0.0, ids=ids)
    if u.compatibility.compatible:
        rep.add("op_norm_eq_slope", np.abs(gap), EXACT_RTOL, ids=ids)
    else:
        rep.extra["norm_gap"] = float(gap.max())
    return rep


# -- scalar targets ----------------------------------------------------------

def _scalar_coords(Y: Space) -> np.ndarray:
    if Y.coords is None or Y.coords.shape[1] != 1:
        raise TargetNotScalar("target must be a subset of the real line")
    return Y.coords[:, 0]


def signed_sum(du: Differential, W: Element) -> np.ndarray:
    """``I(W)(x) = sum_q sign(q - u(x)) W(x)[q]`` for scalar targets."""
    u = du.u
    t = _scalar_coords(u.target)
    m = W.module
    labels = np.array([u.target.index(l) for f in m.fiber_index for l in f],
                      dtype=np.intp)
    s = np.sign(t[labels] - t[u.u[m.owner]]) if len(labels) else np.zeros(0)
    return np.bincount(m.owner, weights=s * W.data, minlength=u.source.n)


def scalar_consistency(u: MetricValuedMap, du: Differential | None = None) -> Report:
    """Compare ``du`` with the differential of ``u`` read as a real function.

    Checks ``I(du(v)) = du_scalar(v)`` on the tangent basis family,
    ``|du| = |du_scalar|``, and that ``iota = [u* d_mu(id)]`` (whose pairing
    is ``I``) is a contraction with ``I(W) = <iota, W>``.

    Raises
    ------
    TargetNotScalar
    """
    t = _scalar_coords(u.target)
    du = du or build_du(u)
    X = u.source
    rep = Report("scalar", compatibility=u.compatibility.to_dict())
    vals = t[u.u]
    dbar = differential(X.full, vals, du.cot_x)
    res = np.zeros(X.n)
    iota = du.lifted_differential(t)
    pair_res = np.zeros(X.n)
    for v in tangent_basis(du):
        W = du(v)
        I = signed_sum(du, W)
        res = np.maximum(res, np.abs(I - pair(dbar.rebase(du.tangent), v)))
        pair_res = np.maximum(pair_res, np.abs(I - pair(iota.rebase(du.codomain), W)))
    ids = X.point_ids
    rep.add("signed_sum_matches_scalar_differential", res, EXACT_RTOL, ids=ids)
    rep.add("norm_matches_scalar_slope",
            np.abs(du.op_norm() - mwug(X.full, vals)), EXACT_RTOL, ids=ids)
    rep.add("iota_contraction", np.maximum(pointwise_norm(iota) - 1.0, 0.0), 0.0,
            ids=ids)
    rep.add("signed_sum_is_iota_pairing", pair_res, EXACT_RTOL, ids=ids)
    return rep


# -- bounded deformation -----------------------------------------------------

class BoundedDeformation:
    """``du`` computed against a target measure ``m_Y`` dominating ``mu``.

    Attributes
    ----------
    du_hat : ModuleMap
        Edge map with target fibers over ``supp m_Y``.
    pi : ModuleMap
        Measure projection ``Ext(cot(Y, m_Y)) -> Ext(cot(Y, mu))``.
    pi_star : ModuleMap
        Adjoint of the pullback ``u* pi`` over ``{|Du| > 0}``.
    C : float
        Smallest constant with ``u#(m restricted to {|Du|>0}) <= C m_Y``.
    """

    def __init__(self, u: MetricValuedMap, m_y, du: Differential | None = None):
        self.u = u
        Y, X = u.target_space, u.source
        m_y = np.asarray(m_y, float)
        if m_y.shape != (Y.n,) or (m_y < 0).any():
            raise ValueError("target measure must be a nonnegative field on Y")
        mu = u.pushforward
        supp_m = Y.support_idx(np.flatnonzero(m_y > 0))
        if not mu.support <= supp_m:
            bad = [Y.point_ids[q] for q in mu.support.idx if m_y[q] <= 0]
            raise DominationFailure(f"supp mu is not inside supp m_Y: {bad!r}")
        self.m_y = m_y
        self.supp_m = supp_m
        self.du = du or build_du(u)
        moved = np.bincount(u.u, weights=X.weights * (u.slope > 0), minlength=Y.n)
        idx = mu.support.idx
        self.C = float(np.max(moved[idx] / m_y[idx])) if len(idx) else 0.0
        self.lip = u.lipschitz_constant()
        self.cot_m = cotangent_module(supp_m)
        nu_hat = X.support_idx(np.flatnonzero(supp_m.mask[u.u]))
        self.nu_hat = nu_hat
        pb_hat, self.lift_hat = pullback(self.cot_m, u.u, nu_hat)
        self.pb_hat = ext(pb_hat, X.full)
        self.codomain_hat = dual(self.pb_hat)
        mat = _edge_matrix(u, supp_m, u.positive, self.du.tangent, self.codomain_hat)
        self.du_hat = ModuleMap(self.du.tangent, self.codomain_hat, mat,
                                bound=u.slope, check_structure=False)
        self.pi = measure_projection(Y, mu.support, supp_m)
        # u* pi over {|Du| > 0}: same coordinate selection, transported
        pb_m_pos, _ = pullback(self.cot_m, u.u, u.positive)
        src = ext(pb_m_pos, X.full)
        self.upi = ModuleMap(src, self.du.pb_ext, selection_matrix(src, self.du.pb_ext),
                             bound=1.0, check_structure=False)
        self.pi_star = self.upi.adjoint()

    def restrict_hat(self, w: Element) -> np.ndarray:
        """Coordinates of a ``du_hat`` value on the points of ``{|Du| > 0}``."""
        m = w.module
        keep = self.u.positive.mask[m.owner]
        return w.data[keep]

    def report(self, family: np.ndarray | None = None) -> Report:
        u, du = self.u, self.du
        ids = u.source.point_ids
        rep = Report("bounded_deformation", compatibility=u.compatibility.to_dict())
        mu = u.pushforward.mass
        dom = np.maximum(mu - self.lip ** 2 * self.C * self.m_y * (1 + EXACT_RTOL), 0.0)
        rep.add("mu_dominated_by_m_y", dom, 0.0)
        claim = 0.0
        ineq = np.zeros(u.source.n)
        gap = np.zeros(u.source.n)
        for v in tangent_basis(du):
            W = du(v)
            hat = self.du_hat(v)
            via = self.pi_star(W.rebase(self.pi_star.source))
            claim = max(claim, float(np.max(np.abs(self.restrict_hat(hat) -
                                                   self.restrict_hat(via)),
                                            initial=0.0)))
            nh, nd = pointwise_norm(hat), pointwise_norm(W)
            ineq = np.maximum(ineq, np.maximum(nh - nd, 0.0))
            gap = np.maximum(gap, nd - nh)
        rep.add("hat_norm_le_du_norm", ineq, 0.0, ids=ids)
        norm_res = np.abs(self.du_hat.op_norm() - du.op_norm())
        if u.compatibility.compatible:
            rep.add("hat_equals_pi_star_du", claim, EXACT_RTOL)
            rep.add("hat_norm_eq_du_norm", norm_res, EXACT_RTOL, ids=ids)
        rep.add("pi_contraction",
                np.maximum(self.pi.op_norm() - 1.0, 0.0), 0.0)
        if family is None:
            family = np.array([u.target.dist[q] for q in range(u.target.n)])
        Y = u.target_space
        proj_res = 0.0
        for f in family:
            big = differential(self.supp_m, f, self.cot_m)
            small = differential(u.mu_support, f, du.cot_mu)
            got = self.pi(big.rebase(self.pi.source)).data
            proj_res = max(proj_res, float(np.max(np.abs(got - small.data), initial=0.0)))
        rep.add("pi_maps_differentials", proj_res, 0.0)
        rep.extra.update(C=self.C, lipschitz=self.lip,
                         max_gap=float(gap.max()) if gap.size else 0.0,
                         norm_gap=float(norm_res.max()) if norm_res.size else 0.0)
        return rep


def bd_consistency(u: MetricValuedMap, m_y, family=None) -> Report:
    """Bounded-deformation comparison; see :class:`BoundedDeformation`.

    Raises
    ------
    DominationFailure
    """
    return BoundedDeformation(u, m_y).report(family)


def norm_gap(u: MetricValuedMap, m_y) -> float:
    """Largest ``|du(v)| - |du_hat(v)|`` over the tangent basis family."""
    return BoundedDeformation(u, m_y).report().extra["max_gap"]


# -- local construction through inverse limits ------------------------------

def ball_family(X: Space) -> list[frozenset]:
    """Closed balls, unions of consecutive balls, and the whole space (as ids)."""
    S = X.full
    ids = X.point_ids
    balls = [frozenset([i, *S.neighbor_idx(i).tolist()]) for i in range(X.n)]
    fam = list(balls)
    fam += [a | b for a, b in zip(balls, balls[1:])]
    fam.append(frozenset(range(X.n)))
    return [frozenset(ids[i] for i in s) for s in dict.fromkeys(fam)]


@dataclass
class LocalPiece:
    omega: Support
    mu_support: Support
    A: Module
    B: Module
    T: ModuleMap
    lift: object


class LocalDifferential:
    """``du`` assembled from restrictions of ``u`` to a directed cover.

    For every set ``Omega`` of the family, ``mu_Omega`` is the pushforward of
    ``|Du|^2 m`` restricted to ``Omega`` and ``T_Omega`` sends
    ``[u* d f]`` to ``d(f o u)`` computed inside ``Omega``.  The ``T_Omega``
    come from the universal property of the pullback (generators are the
    differentials of indicator functions), form a conjugate family between
    two inverse systems, and the induced limit map ``T`` has adjoint
    ``du_loc``.
    """

    def __init__(self, u: MetricValuedMap, family: Iterable | None = None):
        X, Y = u.source, u.target_space
        if family is None:
            family = ball_family(X)
        sets = []
        for om in family:
            s = frozenset(X.index(p) for p in om) if not isinstance(om, Support) \
                else om.subset
            if s not in sets:
                sets.append(s)
        if not sets or frozenset().union(*sets) != frozenset(range(X.n)):
            raise NotACover("the family does not cover the space")
        self.u = u
        self.sets = sets
        keys = list(range(len(sets)))
        leq = [(i, j) for i in keys for j in keys if sets[i] <= sets[j]]
        self.pieces = [self._piece(s) for s in sets]
        A_mods = {i: self.pieces[i].A for i in keys}
        B_mods = {i: self.pieces[i].B for i in keys}
        Pa, Pb = {}, {}
        for i, j in leq:
            Ai, Aj = A_mods[i], A_mods[j]
            Pa[(i, j)] = ModuleMap(Aj, Ai, selection_matrix(Aj, Ai), bound=1.0,
                                   check_structure=False)
            Bi, Bj = B_mods[i], B_mods[j]
            Pb[(i, j)] = ModuleMap(Bj, Bi, selection_matrix(Bj, Bi), bound=1.0,
                                   check_structure=False)
        self.system_A = InverseSystem(keys, leq, A_mods, Pa)
        self.system_B = InverseSystem(keys, leq, B_mods, Pb)
        self.T = limit_map(self.system_A, self.system_B,
                           {i: self.pieces[i].T for i in keys}, u.slope)
        self.du_loc = self.T.adjoint()

    def _piece(self, s: frozenset) -> LocalPiece:
        u = self.u
        X, Y = u.source, u.target_space
        omega = X.support_idx(s)
        nu = X.support_idx([x for x in s if u.slope[x] > 0])
        mu_om = Y.support_idx(np.unique(u.u[nu.idx]))
        cot_mu = cotangent_module(mu_om)
        pb, lift = pullback(cot_mu, u.u, nu)
        B = ext(cotangent_module(omega), X.full)
        # generators: differentials of indicators of supp mu_Omega, with
        # images d(f o u) read off the edges inside Omega
        full = ext(cotangent_module(X.full), X.full)
        restrict = selection_matrix(full, B)
        gens = []
        for q in mu_om.idx:
            ind = np.zeros(Y.n)
            ind[q] = 1.0
            dq = differential(mu_om, ind, cot_mu)
            dg = pullback_differential(u, ind, full)
            gens.append((dq, Element(B, restrict @ dg.data)))
        A = ext(pb, X.full)
        if gens:
            T = induced_map((pb, lift), gens, u.slope).with_modules(A, B, u.slope)
        else:
            T = ModuleMap(A, B, sp.csr_matrix((B.dim, A.dim)), bound=u.slope,
                          check_structure=False)
        return LocalPiece(omega, mu_om, A, B, T, lift)

    def report(self, du: Differential | None = None) -> Report:
        u = self.u
        du = du or build_du(u)
        rep = Report("local", compatibility=u.compatibility.to_dict())
        ids = u.source.point_ids
        loc = self.du_loc
        rep.add("norm_coincidence", np.abs(loc.op_norm() - du.op_norm()),
                EXACT_RTOL, ids=ids)
        basis = tangent_basis(du)
        res = 0.0
        Y = u.target_space
        for piece in self.pieces:
            for q in piece.mu_support.idx:
                ind = np.zeros(Y.n)
                ind[q] = 1.0
                w = du.lifted_differential(ind)
                for v in basis:
                    a = pair(w.rebase(du.codomain), du(v))
                    b = pair(w.rebase(loc.target), loc(v))
                    res = max(res, float(np.max(np.abs(a - b), initial=0.0)))
        rep.add("pairing_coincidence", res, EXACT_RTOL)
        rep.add("matrix_coincidence", loc.max_abs_diff(du.map), EXACT_RTOL)
        rep.extra["family_size"] = len(self.sets)
        rep.extra["top_is_whole_space"] = self.sets[self.system_A.top] == \
            frozenset(range(u.source.n))
        return rep


def local_build(u: MetricValuedMap, family=None) -> LocalDifferential:
    """Local construction of ``du``.

    Raises
    ------
    NotACover, NotDirected
    """
    return LocalDifferential(u, family)
