"""One symmetric-normalised hop over the user-bundle train graph, exchanging views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .graph import spmm


@dataclass
class CrossViewState:
    v_u: np.ndarray
    v_b: np.ndarray


def cross_propagate(ub_graph, e_u, e_b):
    """``v_u = sum_b e_b / sqrt(|N_u| |N_b|)`` and symmetrically ``v_b``.

    Inputs may be flat ``(rows, d)`` or chunked ``(rows, K, w)``; outputs keep
    the input layout.  Nodes without train interactions get zero rows.
    """
    if e_u.shape[0] != ub_graph.left_count or e_b.shape[0] != ub_graph.right_count:
        raise StructuralError(
            f"user-bundle graph is {ub_graph.left_count}x{ub_graph.right_count}, "
            f"got {e_u.shape[0]} users and {e_b.shape[0]} bundles"
        )
    v_u = spmm(ub_graph.normalized_adjacency, e_b)
    v_b = spmm(ub_graph.normalized_adjacency_t, e_u)
    return CrossViewState(v_u, v_b)


def cross_propagate_backward(ub_graph, g_vu, g_vb):
    """Returns ``(g_e_u, g_e_b)``; the hop is linear so this is the transpose."""
    g_eu = spmm(ub_graph.normalized_adjacency, g_vb)
    g_eb = spmm(ub_graph.normalized_adjacency_t, g_vu)
    return g_eu, g_eb
