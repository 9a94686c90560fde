import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from midgn.data import InteractionMatrix
from midgn.disentangle import (
    LayerTape,
    disentangle_layer,
    disentangle_stack,
    disentangle_stack_backward,
    dump_confidences,
    init_confidence,
    normalize_confidence,
    plain_aggregate,
    plain_stack,
    plain_stack_backward,
    route_iteration,
)
from midgn.errors import ConfigError
from midgn.graph import build_bipartite


def graph_from(pairs, n_left, n_right):
    return build_bipartite(InteractionMatrix.from_pairs([p[0] for p in pairs], [p[1] for p in pairs],
                                                        n_left, n_right))


def random_graph(seed, n_left=12, n_right=15, density=0.3):
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(rng.random((n_left, n_right)) < density)
    return graph_from(list(zip(rows, cols)), n_left, n_right)


def oracle_layer(g, chunks, items, k, t, layers=None):
    edges = list(zip(g.left.tolist(), g.right.tolist()))
    cd = {c: [list(chunks[c, j]) for j in range(k)] for c in range(g.left_count)}
    it = {i: list(items[i]) for i in range(g.right_count)}
    if layers is None:
        res = oracles.route_layer(edges, cd, it, k, t)
    else:
        res = oracles.route_stack(edges, cd, it, k, layers, t)
    return np.array([[res[c][j] for j in range(k)] for c in range(g.left_count)])


class TestConfidence:
    def test_uniform_init(self):
        g = random_graph(0)
        assert np.array_equal(init_confidence(g, 4), np.ones((g.edge_count, 4)))
        assert np.array_equal(init_confidence(g, 1), np.ones((g.edge_count, 1)))
        assert init_confidence(graph_from([], 3, 2), 4).shape == (0, 4)
        with pytest.raises(ConfigError):
            init_confidence(g, 0)

    def test_softmax_cases(self):
        np.testing.assert_allclose(normalize_confidence(np.ones((1, 4))), [[0.25] * 4])
        # (0, ln 2) -> (1/(1+2), 2/(1+2))
        np.testing.assert_allclose(normalize_confidence([[0.0, math.log(2)]]), [[1 / 3, 2 / 3]], rtol=1e-15)
        out = normalize_confidence([[1000.0, 0.0]])
        assert np.isfinite(out).all() and out[0, 0] == pytest.approx(1.0) and out[0, 1] < 1e-300

    def test_rows_sum_to_one_on_1k_edges(self):
        rng = np.random.default_rng(0)
        p = normalize_confidence(rng.normal(0, 50, size=(1000, 8)))
        assert (p >= 0).all()
        assert np.abs(p.sum(axis=1) - 1).max() <= 1e-6


class TestRouting:
    def test_single_edge_returns_item(self):
        g = graph_from([(0, 0)], 1, 1)
        item = np.array([[0.3, -1.2, 0.5]])
        conf = np.array([[0.2, -3.0, 4.0]])
        out, _ = route_iteration(g, conf, np.random.default_rng(0).normal(size=(1, 3, 3)), item)
        for k in range(3):
            np.testing.assert_allclose(out[0, k], item[0], rtol=1e-15)

    def test_orthogonal_chunks_leave_confidences(self):
        g = graph_from([(0, 0), (0, 1)], 1, 2)
        items = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        chunks = np.array([[[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]]])
        conf = np.array([[0.5, 1.5], [2.0, -1.0]])
        _, new_conf = route_iteration(g, conf, chunks, items)
        assert np.array_equal(new_conf, conf)

    def test_one_iteration_matches_scalar_oracle(self):
        # 1 user, 2 items, K=2, hand-set embeddings
        g = graph_from([(0, 0), (0, 1)], 1, 2)
        items = np.array([[1.0, 0.5], [-0.4, 2.0]])
        chunks = np.array([[[0.9, 0.1], [-0.3, 0.8]]])
        out, conf = route_iteration(g, init_confidence(g, 2), chunks, items)
        trace = []
        oracles.route_layer([(0, 0), (0, 1)], {0: [[0.9, 0.1], [-0.3, 0.8]]},
                            {0: [1.0, 0.5], 1: [-0.4, 2.0]}, 2, 1, trace)
        np.testing.assert_allclose(out[0], trace[0]["chunks"][0], rtol=0, atol=1e-14)
        np.testing.assert_allclose(conf, [trace[0]["conf"][(0, 0)], trace[0]["conf"][(0, 1)]], atol=1e-14)
        # routing actually prefers different intents for the two items here
        p = normalize_confidence(conf)
        assert p[0, 0] > p[0, 1] and p[1, 1] > p[1, 0]

    def test_isolated_node_is_zero(self):
        g = graph_from([(0, 0), (0, 1)], 3, 2)
        out = disentangle_layer(g, np.ones((3, 2, 2)), np.ones((2, 2)), 2)
        assert np.array_equal(out[1:], np.zeros((2, 2, 2)))

    def test_t_must_be_positive(self):
        g = graph_from([(0, 0)], 1, 1)
        with pytest.raises(ConfigError):
            disentangle_layer(g, np.ones((1, 1, 1)), np.ones((1, 1)), 0)
        with pytest.raises(ConfigError):
            disentangle_stack(g, np.ones((1, 1, 1)), np.ones((1, 1)), 0, 1)


class TestAgainstOracle:
    @pytest.mark.parametrize("t", [1, 2, 3])
    def test_layer(self, t):
        g = random_graph(3)
        rng = np.random.default_rng(t)
        chunks = rng.normal(size=(g.left_count, 3, 4))
        items = rng.normal(size=(g.right_count, 4))
        np.testing.assert_allclose(disentangle_layer(g, chunks, items, t),
                                   oracle_layer(g, chunks, items, 3, t), atol=1e-12)

    def test_t1_and_t2_differ_by_one_update(self):
        g = random_graph(4)
        rng = np.random.default_rng(0)
        chunks = rng.normal(size=(g.left_count, 2, 3))
        items = rng.normal(size=(g.right_count, 3))
        one = disentangle_layer(g, chunks, items, 1)
        two = disentangle_layer(g, chunks, items, 2)
        # T=2 is one more routing iteration fed with the T=1 output and refined confidences
        conf = init_confidence(g, 2)
        first, conf = route_iteration(g, conf, chunks, items)
        second, _ = route_iteration(g, conf, first, items)
        assert np.array_equal(one, first) and np.array_equal(two, second)
        np.testing.assert_allclose(two, oracle_layer(g, chunks, items, 2, 2), atol=1e-12)
        assert not np.allclose(one, two)

    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_stack(self, layers):
        g = random_graph(5)
        rng = np.random.default_rng(layers)
        chunks = rng.normal(size=(g.left_count, 2, 3))
        items = rng.normal(size=(g.right_count, 3))
        got = disentangle_stack(g, chunks, items, layers, 2)
        np.testing.assert_allclose(got, oracle_layer(g, chunks, items, 2, 2, layers=layers), atol=1e-12)
        if layers == 1:
            assert np.array_equal(got, disentangle_layer(g, chunks, items, 2))


class TestDegeneration:
    @pytest.mark.parametrize("t", [1, 2, 3])
    def test_k1_is_plain_aggregation(self, t):
        g = random_graph(6, 30, 40, 0.15)
        rng = np.random.default_rng(t)
        chunks = rng.normal(size=(g.left_count, 1, 5))
        items = rng.normal(size=(g.right_count, 5))
        out = disentangle_layer(g, chunks, items, t)[:, 0]
        edges = list(zip(g.left.tolist(), g.right.tolist()))
        ref = np.array(oracles.plain_aggregate(edges, g.left_count, {i: list(items[i]) for i in range(g.right_count)}))
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)
        np.testing.assert_allclose(plain_aggregate(g, items), ref, rtol=0, atol=1e-12)

    def test_plain_stack_broadcasts(self):
        g = random_graph(7)
        items = np.random.default_rng(0).normal(size=(g.right_count, 3))
        ps = plain_stack(g, items, 4, 3)
        for k in range(4):
            np.testing.assert_allclose(ps[:, k], 3 * plain_aggregate(g, items))


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(seed, 8, 10, 0.35)
        chunks = rng.normal(size=(g.left_count, 3, 2))
        items = rng.normal(size=(g.right_count, 2))
        perm = rng.permutation(g.right_count)  # new id of old item i is perm[i]
        g2 = graph_from(list(zip(g.left.tolist(), perm[g.right].tolist())), g.left_count, g.right_count)
        items2 = np.empty_like(items)
        items2[perm] = items
        np.testing.assert_allclose(disentangle_stack(g, chunks, items, 2, 2),
                                   disentangle_stack(g2, chunks, items2, 2, 2), atol=1e-12)

    def test_monotone_reinforcement(self):
        # intent 0's chunk is aligned with every item, intent 1's is orthogonal
        g = graph_from([(0, 0), (0, 1), (1, 1)], 2, 2)
        items = np.array([[1.0, 0.0], [0.8, 0.0]])
        chunks = np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.0], [0.0, -1.0]]])
        record = []
        disentangle_layer(g, chunks, items, 3, record=record)
        p = record[0]
        assert (p[:, 0] >= p[:, 1]).all() and (p[:, 0] > 0.5).all()

    def test_normalisation_invariant_after_layer(self):
        g = random_graph(8, 40, 50, 0.5)
        rng = np.random.default_rng(1)
        record = []
        disentangle_stack(g, rng.normal(size=(40, 4, 3)), rng.normal(size=(50, 3)), 2, 3, record=record)
        for p in record:
            assert np.abs(p.sum(axis=1) - 1).max() <= 1e-6


class TestBackward:
    @pytest.mark.parametrize("k,layers,t", [(1, 1, 1), (2, 2, 2), (3, 2, 3)])
    def test_stack_gradient_matches_finite_differences(self, k, layers, t):
        g = random_graph(9, 5, 6, 0.5)
        rng = np.random.default_rng(k)
        chunks = rng.normal(size=(g.left_count, k, 3))
        items = rng.normal(size=(g.right_count, 3))
        weights = rng.normal(size=(g.left_count, k, 3))

        def loss(c, it):
            return float(np.sum(weights * disentangle_stack(g, c, it, layers, t)))

        tapes = []
        disentangle_stack(g, chunks, items, layers, t, tapes=tapes)
        g_chunks, g_items = disentangle_stack_backward(g, tapes, weights, items)
        h = 1e-5
        for arr, grad in ((chunks, g_chunks), (items, g_items)):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = loss(chunks, items)
                arr[idx] = orig - h
                down = loss(chunks, items)
                arr[idx] = orig
                num = (up - down) / (2 * h)
                assert abs(num - grad[idx]) <= 1e-6 * max(1.0, abs(num)), (idx, num, grad[idx])

    def test_plain_stack_backward_is_transpose(self):
        g = random_graph(10)
        rng = np.random.default_rng(0)
        items = rng.normal(size=(g.right_count, 3))
        r = rng.normal(size=(g.left_count, 4, 3))
        lhs = np.sum(r * plain_stack(g, items, 4, 2))
        rhs = np.sum(items * plain_stack_backward(g, r, 2))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_confidence_dump(tmp_path):
    g = graph_from([(0, 1), (1, 0)], 2, 2)
    path = tmp_path / "conf.tsv"
    dump_confidences(g, np.array([[0.25, 0.75], [1.0, 0.0]]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "edge_id\tleft\tright\tk\tweight"
    assert lines[1:3] == ["0\t0\t1\t0\t0.25", "0\t0\t1\t1\t0.75"]
    assert len(lines) == 5
