import numpy as np
import pytest
from hypothesis import given

from conftest import rng_of, seeds
from metdiff import instances as inst
from metdiff.differential import (EXACT_RTOL, BoundedDeformation, ball_family,
                                  bd_consistency, build_du, local_build,
                                  norm_gap, norm_identity, scalar_consistency,
                                  tangent_basis)
from metdiff.errors import DominationFailure, NotACover, TargetNotScalar
from metdiff.metricmap import MetricValuedMap, scalar_map
from metdiff.mmspace import random_one_lipschitz


def dense_du_oracle(u):
    """Loop over the definition: one entry per representable moving edge."""
    X, Y = u.source, u.target
    eps = u.eps_y
    supp = set(np.flatnonzero(u.pushforward.mass > 0).tolist())
    out = {}
    for x in range(X.n):
        if u.slope[x] == 0:
            continue
        cols = [y for y in range(X.n) if y != x and X.dist[x, y] <= X.epsilon]
        p = u.u[x]
        rows = [q for q in range(Y.n) if q != p and q in supp and Y.dist[p, q] <= eps]
        D = np.zeros((len(rows), len(cols)))
        for k, y in enumerate(cols):
            q = u.u[y]
            if q in rows:
                D[rows.index(q), k] = Y.dist[p, q] / X.dist[x, y]
        out[x] = D
    return out


def test_two_point_blocks(x2y2):
    du = build_du(x2y2)
    np.testing.assert_array_equal(du.block("a"), [[2.0]])
    np.testing.assert_array_equal(du.block("b"), [[2.0]])
    np.testing.assert_array_equal(du.op_norm(), [2, 2])


def test_scalar_two_points(x2):
    u = scalar_map(x2, [0, 3])
    du = build_du(u)
    np.testing.assert_array_equal(du.op_norm(), [3, 3])
    rep = scalar_consistency(u, du)
    assert rep.passed, rep.to_dict()


def test_monotone_line():
    X = inst.line_space(5)
    vals = [0, 1, 3, 4, 6]
    u = scalar_map(X, vals)
    du = build_du(u)
    np.testing.assert_array_equal(du.op_norm(), [1, 2, 2, 2, 2])
    rep = scalar_consistency(u, du)
    assert rep.passed, rep.to_dict()
    assert rep.check("norm_matches_scalar_slope").max_residual == 0


def test_constant_map_has_zero_differential(line3, x2):
    u = MetricValuedMap(line3, x2, [1, 1, 1])
    du = build_du(u)
    assert du.codomain.dim == 0
    np.testing.assert_array_equal(du.op_norm(), [0, 0, 0])
    assert norm_identity(u, du).passed
    assert local_build(u).report(du).passed


def test_incompatible_norm_gap(incompatible):
    u = incompatible
    du = build_du(u)
    np.testing.assert_array_equal(du.op_norm(), [0, 1, 1, 0])
    rep = norm_identity(u, du)
    assert rep.passed
    assert rep.extra["norm_gap"] == 2
    assert rep.compatibility["violations"]


def test_bd_with_pushforward_measure(x2y2):
    u = x2y2
    rep = bd_consistency(u, u.pushforward.mass)
    assert rep.passed, rep.to_dict()
    assert rep.extra["max_gap"] == 0
    assert norm_gap(u, u.pushforward.mass) == 0


def test_bd_domination_failure(x2y2):
    with pytest.raises(DominationFailure):
        BoundedDeformation(x2y2, [1.0, 0.0])


def test_local_whole_space(x2y2):
    loc = local_build(x2y2, [frozenset({"a", "b"})])
    du = build_du(x2y2)
    assert loc.du_loc.max_abs_diff(du.map) <= EXACT_RTOL
    assert loc.report(du).passed


def test_local_not_a_cover(line3, x2):
    u = MetricValuedMap(line3, x2, [0, 1, 1])
    with pytest.raises(NotACover):
        local_build(u, [frozenset({"a"}), frozenset({"b"})])


def test_scalar_requires_line_target(x2y2):
    with pytest.raises(TargetNotScalar):
        scalar_consistency(x2y2)


def test_ball_family_contains_whole_space(line3):
    fam = ball_family(line3)
    assert frozenset({"a", "b", "c"}) in fam
    assert frozenset({"a", "b"}) in fam


@given(seeds)
def test_blocks_match_loop_oracle(seed):
    u = inst.random_map(rng_of(seed), n_x=(3, 12), n_y=(2, 6))
    du = build_du(u)
    oracle = dense_du_oracle(u)
    for x in range(u.source.n):
        if x in oracle:
            np.testing.assert_array_equal(du.map.block(x), oracle[x])
            # sum-to-sum norm with unit weights is the largest column sum
            colsum = np.abs(oracle[x]).sum(axis=0).max(initial=0.0)
            assert du.op_norm()[x] == colsum
        else:
            assert du.op_norm()[x] == 0


@given(seeds)
def test_norm_identity_random(seed):
    u = inst.random_map(rng_of(seed))
    rep = norm_identity(u)
    assert rep.passed, rep.to_dict()


@given(seeds)
def test_chain_rule_pairing(seed):
    rng = rng_of(seed)
    u = inst.random_map(rng, n_x=(3, 15), n_y=(2, 6))
    du = build_du(u)
    fs = [random_one_lipschitz(u.target, int(s)) for s in rng.integers(0, 2**31, 3)]
    basis = tangent_basis(du)
    for f in fs:
        assert du.pairing_residual(f, basis) <= EXACT_RTOL * max(1.0, u.slope.max())


@given(seeds)
def test_scalar_random(seed):
    u = inst.random_scalar_map(rng_of(seed), n_x=(3, 15))
    rep = scalar_consistency(u)
    assert rep.passed, rep.to_dict()


@given(seeds)
def test_bd_random(seed):
    rng = rng_of(seed)
    u = inst.random_map(rng, n_x=(3, 12), n_y=(2, 6))
    m_y = inst.random_target_measure(rng, u)
    rep = bd_consistency(u, m_y)
    assert rep.passed, rep.to_dict()


@given(seeds)
def test_local_random_cover(seed):
    rng = rng_of(seed)
    u = inst.random_map(rng, n_x=(2, 8), n_y=(2, 5))
    loc = local_build(u, inst.random_cover(rng, u.source))
    rep = loc.report()
    assert rep.passed, rep.to_dict()
