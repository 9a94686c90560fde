"""Chunk-level InfoNCE between the two views of the same entity."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _one_direction(anchor, cand, tau):
    # logits[c, k, k'] = anchor_ck . cand_ck' / tau
    logits = np.einsum("ckw,cjw->ckj", anchor, cand) / tau
    logp = _log_softmax(logits)
    k = anchor.shape[1]
    diag = np.arange(k)
    loss_sum = -logp[:, diag, diag].sum()
    g_logits = np.exp(logp)
    g_logits[:, diag, diag] -= 1.0
    g_logits /= tau
    g_anchor = np.einsum("ckj,cjw->ckw", g_logits, cand)
    g_cand = np.einsum("ckj,ckw->cjw", g_logits, anchor)
    return loss_sum, g_anchor, g_cand


def info_nce_loss(e_chunks, v_chunks, tau=1.0, symmetric=False):
    """Mean over entities and intents of ``-log softmax_k'(e_ck . v_ck' / tau)[k]``.

    ``e_chunks`` and ``v_chunks`` are ``(n, K, w)``.  The negatives of chunk
    ``k`` are the same entity's other chunks in the other view.  With
    ``symmetric=True`` the mirrored direction (anchor in ``v``) is averaged in.

    Returns ``(loss, g_e, g_v)``.
    """
    if not tau > 0:
        raise ConfigError("temperature must be positive")
    e_chunks = np.asarray(e_chunks, dtype=np.float64)
    v_chunks = np.asarray(v_chunks, dtype=np.float64)
    if e_chunks.shape != v_chunks.shape:
        raise ConfigError(f"view shapes differ: {e_chunks.shape} vs {v_chunks.shape}")
    n, k, _ = e_chunks.shape
    terms = n * k
    if terms == 0:
        return 0.0, np.zeros_like(e_chunks), np.zeros_like(v_chunks)
    loss, g_e, g_v = _one_direction(e_chunks, v_chunks, tau)
    if symmetric:
        loss_r, g_v_r, g_e_r = _one_direction(v_chunks, e_chunks, tau)
        loss = 0.5 * (loss + loss_r)
        g_e = 0.5 * (g_e + g_e_r)
        g_v = 0.5 * (g_v + g_v_r)
    # + 0.0 turns the K=1 result -0.0 into 0.0
    return float(loss / terms) + 0.0, g_e / terms, g_v / terms
