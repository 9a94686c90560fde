"""Intent-disentangling graph layers with neighbor routing.

A left node ``c`` (user or bundle) holds ``K`` chunks of width ``w``; items
hold one vector of width ``w``.  Each edge ``(c, i)`` carries ``K`` raw
routing confidences.  One routing iteration

1. refines the raw confidences with the current chunks,
   ``A_k(c, i) += c_k . i``,
2. turns them into a distribution over intents with a per-edge softmax,
3. rebuilds every chunk as the intent-weighted, degree-normalised sum of
   neighbour items,
   ``c_k = sum_i P_k(c,i) / sqrt(D_k(c) D_k(i)) * i``,
   where ``D_k(c)`` and ``D_k(i)`` sum ``P_k`` over the edges of ``c`` and of ``i``.

A layer starts from uniform confidences and runs ``T`` iterations seeded with
the layer input; a stack feeds each layer's output into the next and sums
the layer outputs.  Item embeddings are read-only throughout.

Every forward function can record what it needs on a tape so that the
matching ``*_backward`` function returns exact gradients with respect to the
input chunks and the item table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import spmm


def init_confidence(graph, k_intents):
    if k_intents < 1:
        raise ConfigError("k_intents must be >= 1")
    return np.ones((graph.edge_count, k_intents))


def normalize_confidence(conf):
    """Per-edge softmax over the intent axis, stabilised by max subtraction."""
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape[0] == 0:
        return conf.copy()
    z = conf - conf.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


@dataclass
class _IterationCache:
    chunks_in: np.ndarray
    probs: np.ndarray
    weights: np.ndarray
    deg_left: np.ndarray
    deg_right: np.ndarray


@dataclass
class LayerTape:
    """Intermediates of one layer, newest iteration last."""

    iterations: list = field(default_factory=list)


def _edge_dots(graph, chunks, item_rows):
    # (E, K): dot product of the left endpoint's k-th chunk with the item
    return np.einsum("ekw,ew->ek", chunks[graph.left], item_rows)


def route_iteration(graph, conf, node_chunks, item_emb, item_rows=None, tape=None):
    """One routing iteration; returns ``(new_chunks, refined_raw_conf)``.

    ``node_chunks`` has shape ``(left_count, K, w)`` and ``conf`` shape
    ``(edge_count, K)``.  Nodes without neighbours come out as zero chunks.
    """
    if item_rows is None:
        item_rows = item_emb[graph.right]
    n_left, k, w = node_chunks.shape
    conf = conf + _edge_dots(graph, node_chunks, item_rows)
    probs = normalize_confidence(conf)
    deg_left = spmm(graph.left_incidence, probs)
    deg_right = spmm(graph.right_incidence, probs)
    weights = probs / np.sqrt(deg_left[graph.left] * deg_right[graph.right])
    messages = weights[:, :, None] * item_rows[:, None, :]
    out = spmm(graph.left_incidence, messages.reshape(graph.edge_count, k * w))
    out = out.reshape(n_left, k, w)
    if tape is not None:
        tape.iterations.append(_IterationCache(node_chunks, probs, weights, deg_left, deg_right))
    return out, conf


def route_iteration_backward(graph, cache, g_out, g_conf, item_rows):
    """Backward of :func:`route_iteration`.

    ``g_out`` is the gradient w.r.t. the returned chunks and ``g_conf`` the
    gradient w.r.t. the returned raw confidences.  Returns gradients w.r.t.
    the input chunks, the input raw confidences and the gathered item rows.
    """
    left, right = graph.left, graph.right
    probs, weights = cache.probs, cache.weights
    g_out_edges = g_out[left]
    g_w = np.einsum("ekw,ew->ek", g_out_edges, item_rows)
    g_items = np.einsum("ek,ekw->ew", weights, g_out_edges)

    # weights = probs * deg_left[left]^-1/2 * deg_right[right]^-1/2
    gw_w = g_w * weights
    g_deg_left = -0.5 * spmm(graph.left_incidence, gw_w)
    g_deg_right = -0.5 * spmm(graph.right_incidence, gw_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_deg_left = np.where(cache.deg_left > 0, g_deg_left / cache.deg_left, 0.0)
        g_deg_right = np.where(cache.deg_right > 0, g_deg_right / cache.deg_right, 0.0)
    g_probs = g_w * (weights / probs) + g_deg_left[left] + g_deg_right[right]

    g_raw = probs * (g_probs - np.sum(probs * g_probs, axis=1, keepdims=True))
    g_raw += g_conf

    # raw = conf_in + dot(chunks_in[left], item)
    n_left, k, w = cache.chunks_in.shape
    g_chunks = spmm(graph.left_incidence, (g_raw[:, :, None] * item_rows[:, None, :]).reshape(-1, k * w))
    g_chunks = g_chunks.reshape(n_left, k, w)
    g_items += np.einsum("ek,ekw->ew", g_raw, cache.chunks_in[left])
    return g_chunks, g_raw, g_items


def disentangle_layer(graph, input_chunks, item_emb, t_iterations, conf_init=None,
                      tape=None, record=None):
    """Run ``t_iterations`` routing iterations from ``input_chunks``.

    Confidences start uniform unless ``conf_init`` is given.  When ``record``
    is a list, the normalised confidences of the last iteration are appended.
    """
    if t_iterations < 1:
        raise ConfigError("t_iterations must be >= 1")
    k = input_chunks.shape[1]
    conf = init_confidence(graph, k) if conf_init is None else np.asarray(conf_init, dtype=np.float64)
    item_rows = item_emb[graph.right]
    chunks = input_chunks
    for _ in range(t_iterations):
        chunks, conf = route_iteration(graph, conf, chunks, item_emb, item_rows, tape)
    if record is not None:
        record.append(normalize_confidence(conf))
    return chunks


def disentangle_layer_backward(graph, tape, g_out, item_emb):
    """Returns ``(g_input_chunks, g_item_emb)`` for one recorded layer."""
    item_rows = item_emb[graph.right]
    g_items = np.zeros_like(item_rows)
    g_conf = np.zeros((graph.edge_count, g_out.shape[1]))
    g = g_out
    for cache in reversed(tape.iterations):
        g, g_conf, gi = route_iteration_backward(graph, cache, g, g_conf, item_rows)
        g_items += gi
    g_item_emb = spmm(graph.right_incidence, g_items)
    return g, g_item_emb


def disentangle_stack(graph, node_init_chunks, item_emb, layers, t_iterations,
                      tapes=None, record=None):
    """Sum of ``layers`` stacked layer outputs (the layer-0 input is not included)."""
    if layers < 1:
        raise ConfigError("layers must be >= 1")
    total = np.zeros(node_init_chunks.shape)
    h = node_init_chunks
    for _ in range(layers):
        tape = None
        if tapes is not None:
            tape = LayerTape()
            tapes.append(tape)
        h = disentangle_layer(graph, h, item_emb, t_iterations, tape=tape, record=record)
        total += h
    return total


def disentangle_stack_backward(graph, tapes, g_total, item_emb):
    """Returns ``(g_node_init_chunks, g_item_emb)`` for a recorded stack."""
    g_item = np.zeros_like(item_emb)
    g_h = np.zeros_like(g_total)
    for tape in reversed(tapes):
        g_h = g_h + g_total
        g_h, gi = disentangle_layer_backward(graph, tape, g_h, item_emb)
        g_item += gi
    return g_h, g_item


def plain_aggregate(graph, item_emb):
    """``sum_i i / sqrt(|N_c| |N_i|)`` per left node, shape ``(left_count, w)``."""
    return spmm(graph.normalized_adjacency, item_emb)


def plain_aggregate_backward(graph, g_out):
    return spmm(graph.normalized_adjacency_t, g_out)


def plain_stack(graph, item_emb, k_intents, layers):
    """Ablation stand-in for :func:`disentangle_stack`: plain aggregation copied to every chunk, summed over layers.

    Items are static, so every layer yields the same aggregate.
    """
    agg = plain_aggregate(graph, item_emb)
    return layers * np.repeat(agg[:, None, :], k_intents, axis=1)


def plain_stack_backward(graph, g_total, layers):
    return plain_aggregate_backward(graph, layers * g_total.sum(axis=1))


def dump_confidences(graph, probs, path):
    """Write ``edge_id, left, right, k, weight`` rows as TSV."""
    e, k = probs.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("edge_id\tleft\tright\tk\tweight\n")
        for edge in range(e):
            l, r = graph.left[edge], graph.right[edge]
            for j in range(k):
                fh.write(f"{edge}\t{l}\t{r}\t{j}\t{probs[edge, j]:.17g}\n")
