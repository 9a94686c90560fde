"""Immutable bipartite graphs in compressed form, indexed by canonical edge id.

The canonical edge order is lexicographic in ``(left, right)``, which is the
order :class:`~midgn.data.InteractionMatrix` already keeps its pairs in, so
edge ``e`` of the graph is pair ``e`` of the matrix.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import BoundsError

THREADS_ENV = "MIDGN_NUM_THREADS"


def num_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def spmm(mat, dense):
    """``mat @ dense`` for a CSR ``mat``, optionally split over row blocks.

    Each output row is accumulated in the same order whatever the block
    split, so the threaded path is bit-identical to the serial one.
    """
    threads = num_threads()
    shape = dense.shape
    dense2 = dense.reshape(shape[0], -1)
    n_rows = mat.shape[0]
    if threads == 1 or n_rows < 4 * threads:
        out = mat @ dense2
    else:
        bounds = np.linspace(0, n_rows, threads + 1).astype(np.int64)
        out = np.empty((n_rows, dense2.shape[1]), dtype=np.result_type(mat.dtype, dense2.dtype))

        def work(j):
            a, b = bounds[j], bounds[j + 1]
            out[a:b] = mat[a:b] @ dense2

        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(threads)))
    return np.asarray(out).reshape((n_rows,) + shape[1:])


class BipartiteGraph:
    """Edge set between ``left_count`` left and ``right_count`` right nodes."""

    def __init__(self, left_count, right_count, left, right):
        self.left_count = int(left_count)
        self.right_count = int(right_count)
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        if left.size and (left.max() >= self.left_count or right.max() >= self.right_count):
            raise BoundsError("edge endpoint out of range")
        order = np.lexsort((right, left))
        self.left = left[order]
        self.right = right[order]
        self.edge_count = int(self.left.size)

        self.fwd_indptr = np.zeros(self.left_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.left, minlength=self.left_count), out=self.fwd_indptr[1:])
        self.fwd_indices = self.right

        rev_order = np.lexsort((self.left, self.right))
        self.rev_edge_ids = rev_order
        self.rev_indices = self.left[rev_order]
        self.rev_indptr = np.zeros(self.right_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.right, minlength=self.right_count), out=self.rev_indptr[1:])

        for arr in (self.left, self.right, self.fwd_indptr, self.rev_edge_ids,
                    self.rev_indices, self.rev_indptr):
            arr.setflags(write=False)

    @classmethod
    def from_matrix(cls, matrix):
        return cls(matrix.n_rows, matrix.n_cols, matrix.rows, matrix.cols)

    def __repr__(self):
        return f"BipartiteGraph({self.left_count}x{self.right_count}, edges={self.edge_count})"

    @property
    def left_degree(self):
        return np.diff(self.fwd_indptr)

    @property
    def right_degree(self):
        return np.diff(self.rev_indptr)

    @cached_property
    def left_incidence(self):
        """CSR ``left_count x edge_count``; row ``c`` selects the edges of ``c``."""
        data = np.ones(self.edge_count)
        return sp.csr_matrix(
            (data, np.arange(self.edge_count), self.fwd_indptr),
            shape=(self.left_count, self.edge_count),
        )

    @cached_property
    def right_incidence(self):
        """CSR ``right_count x edge_count``; row ``i`` selects the edges of ``i``."""
        data = np.ones(self.edge_count)
        return sp.csr_matrix(
            (data, self.rev_edge_ids, self.rev_indptr),
            shape=(self.right_count, self.edge_count),
        )

    def adjacency(self, weights=None):
        """CSR ``left_count x right_count`` with optional per-edge weights."""
        data = np.ones(self.edge_count) if weights is None else np.asarray(weights, dtype=np.float64)
        return sp.csr_matrix((data, self.fwd_indices, self.fwd_indptr),
                             shape=(self.left_count, self.right_count))

    @cached_property
    def normalized_adjacency(self):
        """``D_l^{-1/2} A D_r^{-1/2}`` as CSR; isolated nodes get zero rows/cols."""
        dl = self.left_degree.astype(np.float64)
        dr = self.right_degree.astype(np.float64)
        w = 1.0 / np.sqrt(dl[self.left] * dr[self.right]) if self.edge_count else np.zeros(0)
        return self.adjacency(w)

    @cached_property
    def normalized_adjacency_t(self):
        return self.normalized_adjacency.T.tocsr()


def build_bipartite(matrix):
    return BipartiteGraph.from_matrix(matrix)


def neighbors(graph, side, node):
    """Sorted neighbor ids of ``node`` and the canonical ids of those edges.

    Neighbor ids are read-only views into the graph's storage.  Left-side
    edge ids are a contiguous range by construction of the canonical order.
    """
    if side == "left":
        if not 0 <= node < graph.left_count:
            raise BoundsError(f"left id {node} out of range [0, {graph.left_count})")
        a, b = graph.fwd_indptr[node], graph.fwd_indptr[node + 1]
        return graph.fwd_indices[a:b], np.arange(a, b)
    if side == "right":
        if not 0 <= node < graph.right_count:
            raise BoundsError(f"right id {node} out of range [0, {graph.right_count})")
        a, b = graph.rev_indptr[node], graph.rev_indptr[node + 1]
        return graph.rev_indices[a:b], graph.rev_edge_ids[a:b]
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")
