"""Randomised property suites behind ``metdiff check``.

Every suite draws instances from a child of one ``SeedSequence`` and
returns, per instance, a mapping ``property -> (residual, tolerance)``.  A
property passes when the residual is at most the tolerance.  Failing
instances are recorded with their seed so they can be regenerated.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import instances as inst
from . import kirchheim as kh
from .differential import (EXACT_RTOL, BoundedDeformation, LocalDifferential,
                           build_du, scalar_consistency)
from .l0mod import (InverseLimit, dual, ext, induced_map, pointwise_norm,
                    pullback, smul)
from .metricmap import (family_slopes, map_to_json, mu_differential,
                        oracle_family, pullback_differential)
from .mmspace import random_one_lipschitz

Residuals = dict[str, tuple[float, float]]


@dataclass
class InstanceResult:
    index: int
    seed: dict
    residuals: Residuals
    instance: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [k for k, (r, tol) in self.residuals.items() if not r <= tol]


def _max(a) -> float:
    a = np.asarray(a, float)
    return float(a.max()) if a.size else 0.0


# -- maps: norm identity, oracle, chain rule, pairing identity ------------

def maps_instance(rng: np.random.Generator):
    return inst.random_map(rng)


def maps_check(u, rng: np.random.Generator, n_random: int = 50,
               n_chain: int = 20) -> Residuals:
    du = build_du(u)
    slope = u.slope
    out: Residuals = {}
    out["norm_identity"] = (_max(np.abs(du.op_norm() - slope)), EXACT_RTOL)
    fam = oracle_family(u, n_random, int(rng.integers(2**32)))
    fs = family_slopes(u, fam)
    out["oracle_equals_slope"] = (_max(np.abs(fs.max(axis=0) - slope)), 1e-9)
    out["oracle_dominated_by_slope"] = (_max(fs - slope[None, :]), 0.0)
    chain = 0.0
    for _ in range(n_chain):
        f = rng.integers(-16, 17, size=u.target.n) / 4.0
        dg = pullback_differential(u, f, du.cot_x)
        rhs = pointwise_norm(mu_differential(u, f))[u.u] * slope
        chain = max(chain, _max(pointwise_norm(dg) - rhs))
    out["chain_rule"] = (chain, 1e-12)
    basis = du.tangent.basis_family()
    pairing = 0.0
    tests = [u.target.dist[q] for q in range(u.target.n)]
    tests += [random_one_lipschitz(u.target, int(rng.integers(2**32))) for _ in range(3)]
    for f in tests:
        pairing = max(pairing, du.pairing_residual(f, basis))
    out["pairing_identity"] = (pairing, EXACT_RTOL)
    out["slope_le_lipschitz"] = (_max(slope - u.lipschitz_constant()), 0.0)
    total = float(np.sum(slope ** 2 * u.source.weights))
    out["mass_conservation"] = (abs(u.pushforward.total - total),
                                EXACT_RTOL * max(1.0, total))
    g = rng.integers(-8, 9, size=u.source.n) / 4.0
    v = du.tangent.element(rng.integers(-8, 9, size=du.tangent.dim) / 4.0)
    lin = du(smul(g, v)).data - smul(g, du(v)).data
    out["l0_linearity"] = (_max(np.abs(lin)), EXACT_RTOL)
    return out


# -- scalar targets ------------------------------------------------------

def scalar_instance(rng):
    return inst.random_scalar_map(rng)


def scalar_check(u, rng) -> Residuals:
    rep = scalar_consistency(u)
    tol = {"iota_contraction": 0.0}
    return {c.name: (c.max_residual, tol.get(c.name, EXACT_RTOL)) for c in rep.checks}


# -- bounded deformation ---------------------------------------------------

def bd_instance(rng):
    u = inst.random_map(rng)
    return u, inst.random_target_measure(rng, u)


def bd_check(instance, rng) -> Residuals:
    u, m_y = instance
    rep = BoundedDeformation(u, m_y).report()
    zero = {"hat_norm_le_du_norm", "mu_dominated_by_m_y", "pi_contraction",
            "pi_maps_differentials"}
    return {c.name: (c.max_residual, 0.0 if c.name in zero else EXACT_RTOL)
            for c in rep.checks}


def engineered_gap() -> dict:
    """Gaps on the hand-built incompatible instance, recomputed each run."""
    u = inst.incompatible_example()
    bd = BoundedDeformation(u, np.ones(u.target.n))
    rep = bd.report()
    du = bd.du
    return {
        "violations": [list(e) for e in u.compatibility.violations],
        "bd_gap": rep.extra["max_gap"],
        "bd_norm_gap": rep.extra["norm_gap"],
        "slope_minus_du_norm": _max(u.slope - du.op_norm()),
        "bd_inequality_residual": rep.check("hat_norm_le_du_norm").max_residual,
    }


# -- local construction ----------------------------------------------------

def local_instance(rng):
    u = inst.random_map(rng)
    return u, inst.random_cover(rng, u.source)


def local_check(instance, rng) -> Residuals:
    u, cover = instance
    du = build_du(u)
    out: Residuals = {}
    families = {"cover": cover, "whole": [frozenset(u.source.point_ids)]}
    if u.source.n <= 8:
        families["balls"] = None
    for label, fam in families.items():
        rep = LocalDifferential(u, fam).report(du)
        for c in rep.checks:
            out[f"{label}_{c.name}"] = (c.max_residual, EXACT_RTOL)
    return out


# -- module laws -------------------------------------------------------------

def modules_instance(rng):
    X = inst.random_space(rng, int(rng.integers(3, 9)), "x")
    Y = inst.random_space(rng, int(rng.integers(2, 7)), "p")
    return X, Y


def modules_check(instance, rng) -> Residuals:
    X, Y = instance
    out: Residuals = {}
    M = inst.random_module(rng, Y, kind=str(rng.choice(["sup", "sum", "euclidean"])))
    v = inst.random_element(rng, M)
    w = inst.random_element(rng, M)
    g = rng.integers(-8, 9, size=Y.n) / 4.0
    nv, nw = pointwise_norm(v), pointwise_norm(w)
    out["norm_triangle"] = (_max(pointwise_norm(v + w) - nv - nw), 1e-12)
    # sup and sum norms scale exactly; a square root may be off by an ulp
    hom_tol = 0.0 if M.norm_kind != "euclidean" else 4 * np.finfo(float).eps
    hom = np.abs(pointwise_norm(smul(g, v)) - np.abs(g) * nv) / np.maximum(np.abs(g) * nv, 1.0)
    out["norm_homogeneity"] = (_max(hom), hom_tol)
    u = rng.integers(0, Y.n, size=X.n)
    pb, lift = pullback(M, u, X.full)
    out["pullback_norm_identity"] = (_max(np.abs(pointwise_norm(lift(v)) - nv[u])), 0.0)
    base = Y.support_idx(np.flatnonzero(rng.random(Y.n) < 0.6))
    Mb = inst.random_module(rng, Y, base=base)
    a, b = dual(ext(Mb, Y.full)), ext(dual(Mb), Y.full)
    out["ext_dual_commute"] = (0.0 if a == b else 1.0, 0.0)
    # universal property: two generator orders give the same induced map
    N = inst.random_module(rng, X)
    T0 = inst.random_contraction(rng, ext(pb, X.full), N).with_modules(pb, N)
    gens = [M.basis_element(k) for k in range(int(M.dims.max(initial=0)))]
    gens += [inst.random_element(rng, M) for _ in range(3)]
    pairs = [(e, T0(lift(e))) for e in gens]
    bound = T0.op_norm()
    if pb.dim:
        T1 = induced_map((pb, lift), pairs, bound)
        perm = rng.permutation(len(pairs))
        T2 = induced_map((pb, lift), [pairs[i] for i in perm], bound)
        out["induced_order_independent"] = (0.0 if T1.equals(T2) else 1.0, 0.0)
        out["induced_recovers_map"] = (T1.max_abs_diff(T0), EXACT_RTOL)
    # inverse limit of a random directed system
    sysm = inst.random_system(rng, X)
    lim = InverseLimit(sysm)
    x = inst.random_element(rng, lim.module)
    fam = [pointwise_norm(P(x)) for P in lim.projections.values()]
    out["limit_norm_formula"] = (_max(np.abs(lim.norm(x) - np.max(fam, axis=0))), 0.0)
    out["limit_norm_is_top_norm"] = (_max(np.abs(lim.norm(x) - pointwise_norm(x))), 0.0)
    back = lim.element_from_family(lim.family(x))
    out["limit_unique_preimage"] = (_max(np.abs(back.data - x.data)), 0.0)
    C = sysm.constraint_matrix().toarray()
    K = lim.kernel.toarray()
    ker = scipy.linalg.null_space(C) if C.size else np.eye(K.shape[0])
    same_dim = ker.shape[1] == K.shape[1]
    inside = _max(np.abs(C @ K)) if C.size else 0.0
    out["limit_kernel_matches_nullspace"] = (0.0 if same_dim else 1.0, 0.0)
    out["limit_family_compatible"] = (inside, EXACT_RTOL)
    return out


# -- registry and runner ---------------------------------------------------

@dataclass(frozen=True)
class Suite:
    name: str
    generate: Callable
    check: Callable
    serialize: Callable


def _ser_map(u):
    return {"map": map_to_json(u)}


def _ser_pair(inst_):
    u, extra = inst_
    out = {"map": map_to_json(u)}
    if isinstance(extra, np.ndarray):
        out["target_measure"] = extra.tolist()
    else:
        out["family"] = [sorted(map(str, s)) for s in extra]
    return out


def _ser_spaces(inst_):
    from .mmspace import space_to_json
    X, Y = inst_
    return {"source": space_to_json(X), "target": space_to_json(Y)}


SUITES = {
    "maps": Suite("maps", maps_instance, maps_check, _ser_map),
    "scalar": Suite("scalar", scalar_instance, scalar_check, _ser_map),
    "bd": Suite("bd", bd_instance, bd_check, _ser_pair),
    "local": Suite("local", local_instance, local_check, _ser_pair),
    "modules": Suite("modules", modules_instance, modules_check, _ser_spaces),
}
ALL = ("maps", "scalar", "bd", "local", "modules", "kirchheim")


def _seed_doc(ss: np.random.SeedSequence) -> dict:
    return {"entropy": int(ss.entropy), "spawn_key": list(ss.spawn_key)}


def seed_from_doc(doc: dict) -> np.random.SeedSequence:
    return np.random.SeedSequence(doc["entropy"], spawn_key=tuple(doc["spawn_key"]))


def run_instance(suite: Suite, index: int, ss: np.random.SeedSequence) -> InstanceResult:
    rng = np.random.default_rng(ss)
    instance = suite.generate(rng)
    try:
        res = suite.check(instance, rng)
    except Exception as exc:  # an exception is a failed property, not a crash
        res = {f"raised {type(exc).__name__}: {exc}": (math.inf, 0.0)}
    r = InstanceResult(index, _seed_doc(ss), res)
    if r.failed:
        r.instance = suite.serialize(instance)
    return r


def run_suite(name: str, seed: int, n: int, workers: int | None = None) -> dict:
    """Run ``n`` instances of a suite; returns its summary block."""
    if name == "kirchheim":
        return run_kirchheim()
    suite = SUITES[name]
    # one independent stream per (suite, instance)
    root = np.random.SeedSequence(seed, spawn_key=(ALL.index(name),))
    children = root.spawn(n)
    workers = workers or min(4, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(lambda a: run_instance(suite, *a), enumerate(children)))
    props: dict[str, dict] = {}
    for r in results:
        for k, (res, tol) in r.residuals.items():
            p = props.setdefault(k, {"passed": 0, "failed": 0, "max_residual": 0.0,
                                     "tolerance": tol})
            if res <= tol:
                p["passed"] += 1
            else:
                p["failed"] += 1
            p["max_residual"] = max(p["max_residual"], res)
    failures = [{"suite": name, "index": r.index, "seed": r.seed, "failed": r.failed,
                 "instance": r.instance} for r in results if r.failed]
    block = {"instances": n, "properties": dict(sorted(props.items())),
             "failures": failures, "passed": not failures}
    if name == "bd":
        block["diagnostics"] = {"incompatible_instance": engineered_gap()}
    return block


def run_kirchheim(dims=(1, 2, 3)) -> dict:
    rows = kh.kirchheim_rows(dims)
    bad = kh.judge_rows(rows)
    linear = [r.max_error for r in rows if kh.get_entry(r.entry, r.d).linear]
    orders = [r.empirical_order for r in rows if not kh.get_entry(r.entry, r.d).linear
              and not math.isnan(r.empirical_order)]
    sem = []
    rng = np.random.default_rng(0)
    for d in dims:
        for e in kh.catalog(d):
            s = kh.seminorm_check(e, np.full(d, 0.5), rng.normal(size=(4, d)) / 4, 1e-4)
            sem.append(s)
    props = {
        "linear_max_error": {"max_residual": max(linear, default=0.0), "tolerance": 1e-9},
        "nonlinear_min_order": {"value": min(orders, default=math.inf), "minimum": 0.9},
        "seminorm": {"passed": sum(s.passed for s in sem), "failed":
                     sum(not s.passed for s in sem)},
    }
    fails = bad + [f"seminorm check failed ({i})" for i, s in enumerate(sem) if not s.passed]
    return {"instances": len(rows), "properties": props,
            "failures": [{"suite": "kirchheim", "detail": b} for b in fails],
            "passed": not fails, "csv": kh.rows_to_csv(rows)}


def replay(doc: dict) -> InstanceResult:
    """Regenerate a failing instance from its recorded seed and rerun it."""
    suite = SUITES[doc["suite"]]
    return run_instance(suite, doc["index"], seed_from_doc(doc["seed"]))


def run_check(suite: str, seed: int, n: int) -> dict:
    names = ALL if suite == "all" else (suite,)
    summary = {"suite": suite, "seed": seed, "n": n, "warnings": [], "suites": {}}
    if n == 0:
        msg = "n = 0: no instances were run, the check passes vacuously"
        warnings.warn(msg)
        summary["warnings"].append(msg)
        for name in names:
            summary["suites"][name] = {"instances": 0, "properties": {},
                                       "failures": [], "passed": True}
    else:
        for name in names:
            summary["suites"][name] = run_suite(name, seed, n)
    summary["passed"] = all(b["passed"] for b in summary["suites"].values())
    return summary
