import math

import numpy as np
import pytest

import oracles
from midgn.crossview import cross_propagate, cross_propagate_backward
from midgn.data import InteractionMatrix
from midgn.errors import StructuralError
from midgn.graph import build_bipartite


def ub_graph(pairs, m, o):
    return build_bipartite(InteractionMatrix.from_pairs([p[0] for p in pairs], [p[1] for p in pairs], m, o))


def test_degree_one_identity():
    g = ub_graph([(0, 0)], 1, 1)
    e_u, e_b = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    cv = cross_propagate(g, e_u, e_b)
    assert np.array_equal(cv.v_u, e_b) and np.array_equal(cv.v_b, e_u)


def test_two_bundles_of_degree_one():
    g = ub_graph([(0, 0), (0, 1)], 1, 2)
    e_b = np.array([[1.0, 0.0], [0.0, 2.0]])
    cv = cross_propagate(g, np.zeros((1, 2)), e_b)
    np.testing.assert_allclose(cv.v_u[0], (e_b[0] + e_b[1]) / math.sqrt(2), rtol=1e-15)


def test_isolated_bundle_is_zero():
    g = ub_graph([(0, 0)], 1, 2)
    cv = cross_propagate(g, np.ones((1, 3)), np.ones((2, 3)))
    assert np.array_equal(cv.v_b[1], np.zeros(3))


def random_ub(seed, m=9, o=7):
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(rng.random((m, o)) < 0.35)
    return ub_graph(list(zip(rows, cols)), m, o), rng


def test_matches_dense_normalised_adjacency_and_scalar_oracle():
    g, rng = random_ub(0)
    e_u, e_b = rng.normal(size=(9, 4)), rng.normal(size=(7, 4))
    y = np.zeros((9, 7))
    y[g.left, g.right] = 1
    du, db = y.sum(1), y.sum(0)
    with np.errstate(divide="ignore"):
        iu = np.where(du > 0, 1 / np.sqrt(du), 0)
        ib = np.where(db > 0, 1 / np.sqrt(db), 0)
    norm = iu[:, None] * y * ib[None, :]
    cv = cross_propagate(g, e_u, e_b)
    np.testing.assert_allclose(cv.v_u, norm @ e_b, rtol=0, atol=1e-10)
    np.testing.assert_allclose(cv.v_b, norm.T @ e_u, rtol=0, atol=1e-10)
    vu, vb = oracles.cross(list(zip(g.left.tolist(), g.right.tolist())), e_u.tolist(), e_b.tolist())
    np.testing.assert_allclose(cv.v_u, vu, atol=1e-12)
    np.testing.assert_allclose(cv.v_b, vb, atol=1e-12)


@pytest.mark.parametrize("alpha", [-2.5, 0.0, 3.0])
def test_linearity(alpha):
    g, rng = random_ub(1)
    e_u, e_b = rng.normal(size=(9, 2, 3)), rng.normal(size=(7, 2, 3))
    a, b = cross_propagate(g, alpha * e_u, alpha * e_b), cross_propagate(g, e_u, e_b)
    np.testing.assert_allclose(a.v_u, alpha * b.v_u, atol=1e-12)
    np.testing.assert_allclose(a.v_b, alpha * b.v_b, atol=1e-12)
    assert a.v_u.shape == (9, 2, 3)


def test_backward_is_adjoint():
    g, rng = random_ub(2)
    e_u, e_b = rng.normal(size=(9, 4)), rng.normal(size=(7, 4))
    r_u, r_b = rng.normal(size=(9, 4)), rng.normal(size=(7, 4))
    cv = cross_propagate(g, e_u, e_b)
    g_eu, g_eb = cross_propagate_backward(g, r_u, r_b)
    assert np.sum(r_u * cv.v_u) + np.sum(r_b * cv.v_b) == pytest.approx(
        np.sum(g_eu * e_u) + np.sum(g_eb * e_b), rel=1e-12)


def test_shape_mismatch():
    g, _ = random_ub(3)
    with pytest.raises(StructuralError):
        cross_propagate(g, np.ones((3, 2)), np.ones((7, 2)))
