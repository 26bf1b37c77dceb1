import numpy as np
import pytest
from hypothesis import given

from conftest import rng_of, seeds
from metdiff import instances as inst
from metdiff.errors import NotNested
from metdiff.l0mod import dual, ext, pair, pointwise_norm
from metdiff.mmspace import lipschitz_constant, random_one_lipschitz
from metdiff.sobolev import (cotangent_module, differential, measure_lift,
                             measure_projection, mwug, norming_vector,
                             selection_matrix, tangent_module)


def test_differential_two_points(x2):
    df = differential(x2.full, [0, 3])
    np.testing.assert_array_equal(df.at(0), [3])
    np.testing.assert_array_equal(df.at(1), [-3])
    np.testing.assert_array_equal(pointwise_norm(df), [3, 3])
    np.testing.assert_array_equal(mwug(x2.full, [0, 3]), [3, 3])


def test_differential_line(line3):
    df = differential(line3.full, {"a": 0, "b": 1, "c": 2})
    assert df.module.fiber_index == (("b",), ("a", "c"), ("b",))
    np.testing.assert_array_equal(df.at(1), [-1, 1])
    np.testing.assert_array_equal(mwug(line3.full, [0, 1, 2]), [1, 1, 1])
    np.testing.assert_array_equal(mwug(line3.full, [0, 1, 0]), [1, 1, 1])


def test_constant_and_isolated(line3):
    assert not differential(line3.full, [4, 4, 4]).data.any()
    sub = line3.support(["a", "c"])
    assert cotangent_module(sub).dim == 0
    np.testing.assert_array_equal(mwug(sub, [0, 5, 9]), [0, 0, 0])


def test_tangent_is_dual(line3):
    T = tangent_module(line3.full)
    assert T.norm_kind == "sum" and T == dual(cotangent_module(line3.full))


def test_norming_vector_ties(x2):
    M = cotangent_module(x2.full)
    assert M.dim == 2
    line = inst.line_space(3)
    omega = differential(line.full, [2, 0, 2])
    v = norming_vector(omega)
    np.testing.assert_array_equal(v.at(1), [1, 0])
    np.testing.assert_array_equal(pair(omega, v), [2, 2, 2])


def test_measure_projection_example(line3):
    E1 = line3.support(["a", "b"])
    P = measure_projection(line3, E1, line3.full)
    f = np.array([0.0, 1.0, 5.0])
    w = P(differential(line3.full, f))
    assert w.module.fiber_index == (("b",), ("a",), ())
    np.testing.assert_array_equal(w.data, [1, -1])
    np.testing.assert_array_equal(P.op_norm(), [1, 1, 0])
    L = measure_lift(P)
    np.testing.assert_array_equal(P(L(w)).data, w.data)
    np.testing.assert_array_equal(pointwise_norm(L(w)), pointwise_norm(w))


def test_measure_projection_requires_nesting(line3):
    with pytest.raises(NotNested):
        measure_projection(line3, line3.full, line3.support(["a"]))


def test_selection_requires_labels(line3):
    with pytest.raises(NotNested):
        selection_matrix(cotangent_module(line3.support(["a", "b"])),
                         cotangent_module(line3.full))


@given(seeds)
def test_linearity(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, int(rng.integers(2, 15)))
    f, g = rng.integers(-9, 10, X.n) / 4.0, rng.integers(-9, 10, X.n) / 4.0
    a = float(rng.integers(-4, 5)) / 2
    np.testing.assert_allclose(differential(X.full, f + a * g).data,
                               differential(X.full, f).data + a * differential(X.full, g).data,
                               rtol=1e-12, atol=1e-12)


@given(seeds)
def test_locality(seed):
    # if f = g on a ball around x, their differentials agree at x
    rng = rng_of(seed)
    X = inst.random_space(rng, 10)
    f = rng.normal(size=X.n)
    g = f.copy()
    x = int(rng.integers(X.n))
    nbrs = set(X.indices_of(X.neighbors(X.point_ids[x]))) | {x}
    far = [i for i in range(X.n) if i not in nbrs]
    g[far] += rng.normal(size=len(far))
    np.testing.assert_array_equal(differential(X.full, f).at(x),
                                  differential(X.full, g).at(x))


@given(seeds)
def test_duality_and_slope(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 12)
    f = random_one_lipschitz(X, seed) * 3
    df = differential(X.full, f)
    s = mwug(X.full, f)
    np.testing.assert_array_equal(pointwise_norm(df), s)
    np.testing.assert_allclose(pair(df, norming_vector(df)), s, rtol=1e-14)
    assert (s <= lipschitz_constant(X, f) * (1 + 1e-12)).all()


@given(seeds)
def test_chain_rule_inequality(seed):
    # |d(phi o f)| <= Lip(phi) |df| for phi(t) = |t - c|
    rng = rng_of(seed)
    X = inst.random_space(rng, 12)
    f = rng.normal(size=X.n)
    c = float(rng.normal())
    assert (mwug(X.full, np.abs(f - c)) <= mwug(X.full, f) * (1 + 1e-12) + 1e-15).all()


@given(seeds)
def test_differentials_generate_fibers(seed):
    # indicator functions of single points span every cotangent fiber
    rng = rng_of(seed)
    X = inst.random_space(rng, int(rng.integers(2, 10)))
    M = cotangent_module(X.full)
    G = np.array([differential(X.full, np.eye(X.n)[j], M).data for j in range(X.n)])
    for i in range(X.n):
        block = G[:, M.offsets[i]:M.offsets[i + 1]]
        assert np.linalg.matrix_rank(block) == M.dims[i]


@given(seeds)
def test_projection_maps_differentials(seed):
    rng = rng_of(seed)
    X = inst.random_space(rng, 10)
    E1 = X.support_idx(np.flatnonzero(rng.random(X.n) < 0.6))
    P = measure_projection(X, E1, X.full)
    f = rng.normal(size=X.n)
    w = P(differential(X.full, f))
    np.testing.assert_array_equal(w.data, differential(E1, f).rebase(ext(cotangent_module(E1), X.full)).data)
    assert (P.op_norm() <= 1).all()
