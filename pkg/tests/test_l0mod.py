import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given

from conftest import rng_of, seeds
from metdiff import instances as inst
from metdiff.errors import (AbsoluteContinuityViolation, BaseMismatch,
                            BoundViolated, CompositionLawViolated,
                            ConjugacyViolated, GeneratorsDoNotSpan,
                            IncompatibleFamily, InconsistentImages,
                            NotASuperset, NotDirected)
from metdiff.l0mod import (Element, InverseLimit, InverseSystem, Module,
                           ModuleMap, dual, ext, induced_map, inverse_limit,
                           limit_map, norming_element, pair, pointwise_norm,
                           pullback, pullback_map, smul)
from metdiff.mmspace import build_space


def one_fiber(space, dims, kind="sup", weights=None):
    return Module(space.full, tuple(tuple(range(d)) for d in dims), kind, weights)


def test_pointwise_norm_examples(x2):
    for kind, expected in [("sup", 4), ("sum", 7), ("euclidean", 5)]:
        M = one_fiber(x2, [2, 0], kind)
        v = M.element({"a": [3, -4]})
        assert pointwise_norm(v)[0] == expected
        assert pointwise_norm(v)[1] == 0
    assert (pointwise_norm(one_fiber(x2, [2, 1]).zero()) == 0).all()


def test_smul_examples(x2):
    M = one_fiber(x2, [1, 1])
    v = M.element([3, 5])
    np.testing.assert_array_equal(smul(np.ones(2), v).data, v.data)
    assert not smul(np.zeros(2), v).data.any()
    np.testing.assert_array_equal(pointwise_norm(smul([2, -1], v)), [6, 5])
    with pytest.raises(BaseMismatch):
        smul(np.ones(3), v)


@given(seeds)
def test_norm_axioms(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 6)
    M = inst.random_module(rng, X)
    v, w = inst.random_element(rng, M), inst.random_element(rng, M)
    g = rng.integers(-8, 9, size=X.n) / 4.0
    assert (pointwise_norm(v + w) <= pointwise_norm(v) + pointwise_norm(w) + 1e-12).all()
    np.testing.assert_allclose(pointwise_norm(smul(g, v)), np.abs(g) * pointwise_norm(v),
                               rtol=4e-16, atol=0)


def test_dual_examples(x2):
    M = one_fiber(x2, [2, 0], "sup", [2.0, 1.0])
    D = dual(M)
    assert D.norm_kind == "sum"
    np.testing.assert_array_equal(D.weights, [0.5, 1.0])
    assert dual(D) == M
    assert D.dims[1] == 0


def _ball_vertices(kind, w):
    k = len(w)
    if kind == "sup":
        return np.array(list(itertools.product(*[(-1 / wi, 1 / wi) for wi in w])))
    if kind == "sum":
        return np.concatenate([np.diag(1 / w), -np.diag(1 / w)])
    raise ValueError(kind)


@pytest.mark.parametrize("kind", ["sup", "sum"])
def test_dual_norm_matches_brute_force(kind):
    # the dual norm of omega is max over the unit ball of the pairing
    rng = np.random.default_rng(1)
    w = np.array([2.0, 1.0, 0.5])
    X = build_space(["o"], [[0]], [1], 1.0)
    M = Module(X.full, ((0, 1, 2),), kind, w)
    for _ in range(20):
        omega = rng.normal(size=3)
        brute = np.max(_ball_vertices(kind, w) @ omega)
        got = pointwise_norm(Element(dual(M), omega))[0]
        assert got == pytest.approx(brute, rel=1e-14)


def test_euclidean_dual_brute_force():
    w = np.array([2.0, 0.5])
    X = build_space(["o"], [[0]], [1], 1.0)
    M = Module(X.full, ((0, 1),), "euclidean", w)
    theta = np.linspace(0, 2 * np.pi, 200001)
    ball = np.stack([np.cos(theta), np.sin(theta)], 1) / np.sqrt(w)
    omega = np.array([0.3, -1.7])
    brute = np.max(ball @ omega)
    assert pointwise_norm(Element(dual(M), omega))[0] == pytest.approx(brute, rel=1e-9)


def test_ext_examples(x2):
    base = x2.support(["a"])
    M = Module(base, ((0, 1), ()), "sup")
    assert ext(M, base) == M
    E = ext(M, x2.full)
    v = Element(E, [3.0, -1.0])
    np.testing.assert_array_equal(pointwise_norm(v), [3, 0])
    with pytest.raises(NotASuperset):
        ext(one_fiber(x2, [1, 1]), base)


@given(seeds)
def test_ext_dual_commute(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 7)
    base = X.support_idx(np.flatnonzero(rng.random(X.n) < 0.5))
    M = inst.random_module(rng, X, base=base)
    a, b = dual(ext(M, X.full)), ext(dual(M), X.full)
    assert a == b
    v = inst.random_element(rng, a)
    np.testing.assert_array_equal(pointwise_norm(v), pointwise_norm(v.rebase(b)))


def test_norming_element_ties(x2):
    M = one_fiber(x2, [2, 2])
    omega = M.element({"a": [3, -1], "b": [2, -2]})
    v = norming_element(omega)
    np.testing.assert_array_equal(v.at(0), [1, 0])
    np.testing.assert_array_equal(v.at(1), [1, 0])
    np.testing.assert_array_equal(pair(omega, v), [3, 2])


@given(seeds)
def test_norming_element_attains(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 6)
    M = inst.random_module(rng, X)
    omega = inst.random_element(rng, M)
    v = norming_element(omega)
    assert (pointwise_norm(v) <= 1 + 1e-15).all()
    np.testing.assert_allclose(pair(omega, v), pointwise_norm(omega), rtol=1e-14)


# -- pullback and universal property ----------------------------------------

def test_pullback_identity(line3):
    M = one_fiber(line3, [1, 2, 0])
    pb, lift = pullback(M, np.arange(3), line3.full)
    assert pb == M
    v = M.element([1.0, 2.0, -3.0])
    np.testing.assert_array_equal(lift(v).data, v.data)


def test_pullback_constant(line3, x2):
    M = one_fiber(x2, [2, 1])
    v = M.element([1.0, -5.0, 2.0])
    pb, lift = pullback(M, np.zeros(3, int), line3.full)
    assert pb.fiber_index == ((0, 1),) * 3
    np.testing.assert_array_equal(pointwise_norm(lift(v)), [5, 5, 5])


def test_pullback_bijection(x2):
    Y = build_space(["p", "q"], [[0, 2], [2, 0]], [1, 1], 1.0)
    M = one_fiber(Y, [1, 3], "sum")
    v = M.element([2.0, 1.0, -1.0, 1.0])
    pb, lift = pullback(M, [1, 0], x2.full)
    assert list(pb.dims) == [3, 1]
    np.testing.assert_array_equal(pointwise_norm(lift(v)), pointwise_norm(v)[[1, 0]])


def test_pullback_absolute_continuity(x2, line3):
    M = Module(x2.support(["a"]), ((0,), ()), "sup")
    with pytest.raises(AbsoluteContinuityViolation) as exc:
        pullback(M, [0, 1, 1], line3.full)
    assert exc.value.points == ["b", "c"]


@given(seeds)
def test_pullback_norm_identity(seed):
    rng = rng_of(seed)
    X, Y = inst.random_space(rng, 8), inst.random_space(rng, 5, "p")
    M = inst.random_module(rng, Y)
    u = rng.integers(0, Y.n, size=X.n)
    v = inst.random_element(rng, M)
    pb, lift = pullback(M, u, X.full)
    np.testing.assert_array_equal(pointwise_norm(lift(v)), pointwise_norm(v)[u])


def _basis_gens(M):
    return [M.basis_element(k) for k in range(int(M.dims.max()))]


def test_induced_identity_and_scaling(line3):
    M = one_fiber(line3, [2, 1, 2])
    pb = pullback(M, np.arange(3), line3.full)
    gens = _basis_gens(M)
    T = induced_map(pb, [(g, g) for g in gens], 1.0)
    np.testing.assert_array_equal(T.matrix.toarray(), np.eye(M.dim))
    S = induced_map(pb, [(g, g * 2) for g in gens], 2.0)
    np.testing.assert_array_equal(S.matrix.toarray(), 2 * np.eye(M.dim))
    np.testing.assert_array_equal(S.op_norm(), [2, 2, 2])


def test_induced_overdetermined_matches_spanning(line3):
    rng = np.random.default_rng(5)
    M = one_fiber(line3, [2, 2, 1], "euclidean")
    pb = pullback(M, np.arange(3), line3.full)
    A = np.array([[1.0, 0.5], [-0.25, 1.0]]) / 2
    T0 = ModuleMap.from_blocks(M, M, {0: A, 1: A.T, 2: [[0.5]]})
    gens = _basis_gens(M)
    extra = [inst.random_element(rng, M) for _ in range(4)]
    T1 = induced_map(pb, [(g, T0(g)) for g in gens], T0.op_norm())
    T2 = induced_map(pb, [(g, T0(g)) for g in gens + extra], T0.op_norm())
    assert T1.max_abs_diff(T2) < 1e-14
    assert T1.max_abs_diff(T0) < 1e-14


def test_induced_errors(line3):
    M = one_fiber(line3, [2, 1, 1])
    pb = pullback(M, np.arange(3), line3.full)
    e0 = M.basis_element(0)
    with pytest.raises(GeneratorsDoNotSpan) as exc:
        induced_map(pb, [(e0, e0)], 1.0)
    assert exc.value.points == ["a"]
    gens = _basis_gens(M)
    with pytest.raises(BoundViolated):
        induced_map(pb, [(g, g * 3) for g in gens], 2.0)
    bad = [(g, g) for g in gens] + [(gens[0], gens[0] * 0)]
    with pytest.raises(InconsistentImages):
        induced_map(pb, bad, 1.0)


@given(seeds)
def test_induced_order_independent(seed):
    rng = rng_of(seed)
    X, Y = inst.random_space(rng, 6), inst.random_space(rng, 4, "p")
    M = inst.random_module(rng, Y, max_dim=3)
    if M.dim == 0:
        return
    u = rng.integers(0, Y.n, size=X.n)
    pb, lift = pullback(M, u, X.full)
    N = inst.random_module(rng, X)
    T0 = inst.random_contraction(rng, pb, N)
    gens = _basis_gens(M) + [inst.random_element(rng, M) for _ in range(3)]
    pairs = [(g, T0(lift(g))) for g in gens]
    T1 = induced_map((pb, lift), pairs, T0.op_norm())
    T2 = induced_map((pb, lift), pairs[::-1], T0.op_norm())
    assert T1.equals(T2)
    assert T1.max_abs_diff(T0) < 1e-12


def test_pullback_map_blocks(x2, line3):
    M = one_fiber(x2, [2, 1])
    T = ModuleMap.from_blocks(M, M, {0: [[0.5, 0], [0, 1]], 1: [[0.25]]})
    u = [1, 0, 0]
    src = pullback(M, u, line3.full)[1]
    tgt = pullback(M, u, line3.full)[1]
    P = pullback_map(T, src, tgt)
    np.testing.assert_array_equal(P.block(0), [[0.25]])
    np.testing.assert_array_equal(P.block(2), [[0.5, 0], [0, 1]])


# -- operator norms ------------------------------------------------------------

KINDS = ["sup", "sum", "euclidean"]


def _brute_op_norm(A, ks, ws, kt, wt):
    if ks == "euclidean":
        theta = np.linspace(0, 2 * np.pi, 400001)
        pts = np.stack([np.cos(theta), np.sin(theta)], 1) / np.sqrt(ws)
    else:
        pts = _ball_vertices(ks, ws)
    img = pts @ A.T
    if kt == "sup":
        n = np.max(wt * np.abs(img), axis=1)
    elif kt == "sum":
        n = np.sum(wt * np.abs(img), axis=1)
    else:
        n = np.sqrt(np.sum(wt * img * img, axis=1))
    return n.max()


@pytest.mark.parametrize("ks, kt", list(itertools.product(KINDS, KINDS)))
def test_op_norm_against_brute_force(ks, kt):
    rng = np.random.default_rng(hash((ks, kt)) % 2**32)
    X = build_space(["o"], [[0]], [1], 1.0)
    for _ in range(5):
        ws, wt = rng.integers(1, 5, 2) / 2.0, rng.integers(1, 5, 2) / 2.0
        A = rng.normal(size=(2, 2))
        S = Module(X.full, ((0, 1),), ks, ws)
        T = Module(X.full, ((0, 1),), kt, wt)
        got = ModuleMap(S, T, A).op_norm()[0]
        brute = _brute_op_norm(A, ks, ws, kt, wt)
        tol = 1e-8 if ks == "euclidean" else 1e-13
        assert got == pytest.approx(brute, rel=tol)


def test_module_map_rejects_coupling(x2):
    M = one_fiber(x2, [1, 1])
    with pytest.raises(ValueError):
        ModuleMap(M, M, [[0, 1], [1, 0]])


@given(seeds)
def test_module_map_l0_linear(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 6)
    S, T = inst.random_module(rng, X), inst.random_module(rng, X)
    A = inst.random_contraction(rng, S, T)
    v = inst.random_element(rng, S)
    g = rng.integers(-8, 9, size=X.n) / 4.0
    np.testing.assert_array_equal(A(smul(g, v)).data, smul(g, A(v)).data)
    assert (pointwise_norm(A(v)) <= A.op_norm() * pointwise_norm(v) * (1 + 1e-12) + 1e-300).all()


# -- inverse limits ---------------------------------------------------------

def test_constant_system(line3):
    M = one_fiber(line3, [1, 2, 1])
    I = ModuleMap.identity(M)
    sysm = InverseSystem([0, 1, 2], [(0, 2), (1, 2)], {i: M for i in range(3)},
                         {(0, 2): I, (1, 2): I})
    L, proj = inverse_limit(sysm)
    assert L == M
    for P in proj.values():
        np.testing.assert_array_equal(P.matrix.toarray(), np.eye(M.dim))


def test_two_chain():
    X = build_space(["o"], [[0]], [1], 1.0)
    M = Module(X.full, ((0,),), "sup")
    half = ModuleMap(M, M, [[0.5]])
    sysm = InverseSystem(["lo", "hi"], [("lo", "hi")], {"lo": M, "hi": M},
                         {("lo", "hi"): half})
    lim = InverseLimit(sysm)
    t = -3.0
    v = Element(lim.module, [t])
    fam = lim.family(v)
    assert fam["lo"].data[0] == t / 2 and fam["hi"].data[0] == t
    assert lim.norm(v)[0] == max(abs(t) / 2, abs(t)) == abs(t)
    back = lim.element_from_family({"lo": Element(M, [t / 2]), "hi": Element(M, [t])})
    assert back.data[0] == t
    with pytest.raises(IncompatibleFamily):
        lim.element_from_family({"lo": Element(M, [t]), "hi": Element(M, [t])})


@given(seeds)
def test_random_system_universal_property(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 5)
    sysm = inst.random_system(rng, X)
    lim = InverseLimit(sysm)
    # brute force: the kernel of the stacked constraints has the top's dimension
    C = sysm.constraint_matrix().toarray()
    ker = scipy.linalg.null_space(C)
    assert ker.shape[1] == lim.module.dim
    # every compatible family from the kernel has exactly one preimage
    offs = np.cumsum([0] + [sysm.modules[i].dim for i in sysm.index])
    for col in ker.T:
        fam = {i: Element(sysm.modules[i], col[offs[k]:offs[k + 1]])
               for k, i in enumerate(sysm.index)}
        v = lim.element_from_family(fam)
        for i, P in lim.projections.items():
            np.testing.assert_allclose(P(v).data, fam[i].data, atol=1e-12)
        norms = np.max([pointwise_norm(f) for f in fam.values()], axis=0)
        np.testing.assert_allclose(lim.norm(v), norms, atol=1e-12)
    for P in lim.projections.values():
        assert (P.op_norm() <= 1 + 1e-12).all()


def test_not_directed(line3):
    M = one_fiber(line3, [1, 1, 1])
    with pytest.raises(NotDirected):
        InverseSystem([0, 1], [], {0: M, 1: M}, {})


def test_composition_law_violated(line3):
    M = one_fiber(line3, [1, 1, 1])
    I = ModuleMap.identity(M)
    half = ModuleMap(M, M, I.matrix * 0.5)
    with pytest.raises(CompositionLawViolated):
        InverseSystem([0, 1, 2], [(0, 1), (1, 2), (0, 2)], {i: M for i in range(3)},
                      {(0, 1): half, (1, 2): half, (0, 2): half})


def test_limit_map_identity_and_scaling(line3):
    M = one_fiber(line3, [1, 2, 1])
    I = ModuleMap.identity(M)
    half = ModuleMap(M, M, I.matrix * 0.5)
    sysm = InverseSystem([0, 1], [(0, 1)], {0: M, 1: M}, {(0, 1): half})
    T = limit_map(sysm, sysm, {0: I, 1: I}, 1.0)
    np.testing.assert_array_equal(T.matrix.toarray(), np.eye(M.dim))
    g = np.array([2.0, -1.0, 0.5])
    G = ModuleMap.from_blocks(M, M, {i: g[i] * np.eye(M.dims[i]) for i in range(3)})
    T = limit_map(sysm, sysm, {0: G, 1: G}, np.abs(g))
    np.testing.assert_array_equal(T.matrix.toarray(), G.matrix.toarray())
    with pytest.raises(BoundViolated):
        limit_map(sysm, sysm, {0: G, 1: G}, 1.0)
    with pytest.raises(ConjugacyViolated):
        limit_map(sysm, sysm, {0: I, 1: G}, np.maximum(np.abs(g), 1))


@given(seeds)
def test_limit_map_commutes(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 5)
    size = int(rng.integers(3, 6))
    sysm = inst.random_tree_system(rng, X, size)
    # conjugate family: scalar multiples of the identity commute with everything
    g = rng.integers(-4, 5, size=X.n) / 4.0
    maps = {i: ModuleMap.from_blocks(
        sysm.modules[i], sysm.modules[i],
        {x: g[x] * np.eye(sysm.modules[i].dims[x]) for x in range(X.n)})
        for i in sysm.index}
    T = limit_map(sysm, sysm, maps, np.abs(g))
    lim = InverseLimit(sysm)
    for i in sysm.index:
        lhs = (lim.projections[i].matrix @ T.matrix).toarray()
        rhs = (maps[i].matrix @ lim.projections[i].matrix).toarray()
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)
