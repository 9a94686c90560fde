"""Synthetic bundle datasets with planted intents, and intent-recovery scoring."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import BundleDataset, InteractionMatrix, save_dataset
from .errors import ConfigError

NOISE = -1


@dataclass
class SynthConfig:
    n_users: int = 400
    n_bundles: int = 200
    true_intents: int = 4
    items_per_intent: int = 200
    bundles_per_user: int = 8
    intents_per_bundle: int = 2
    bundle_size: int = 10
    items_per_user: int = 30
    intents_per_user: int = 2
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_users, self.n_bundles, self.true_intents, self.items_per_intent,
                  self.bundles_per_user, self.intents_per_bundle, self.bundle_size,
                  self.items_per_user, self.intents_per_user)
        if any(c < 1 for c in counts):
            raise ConfigError("all counts must be positive")
        if not 0 <= self.noise_rate < 1:
            raise ConfigError("noise_rate must lie in [0, 1)")
        if self.intents_per_bundle > self.true_intents:
            raise ConfigError("intents_per_bundle exceeds true_intents")
        if self.intents_per_user > self.true_intents:
            raise ConfigError("intents_per_user exceeds true_intents")
        if self.bundle_size < self.intents_per_bundle:
            raise ConfigError("bundle_size must allow one item per bundle intent")
        if -(-self.bundle_size // self.intents_per_bundle) > self.items_per_intent:
            raise ConfigError("bundle_size needs more items per intent than exist")
        if self.bundles_per_user > self.n_bundles:
            raise ConfigError("bundles_per_user exceeds n_bundles")

    @property
    def n_items(self):
        return self.true_intents * self.items_per_intent


@dataclass
class GroundTruth:
    """Planted labels; edge label arrays follow the canonical pair order, ``-1`` marks noise."""

    item_labels: np.ndarray
    user_prefs: np.ndarray
    bundle_intents: np.ndarray
    ui_labels: np.ndarray
    bi_labels: np.ndarray

    def to_dict(self):
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, values):
        return cls(**{k: np.asarray(v) for k, v in values.items()})


def _finish(rows, cols, labels, n_rows, n_cols, noise_rate, rng):
    """Rewire a ``noise_rate`` fraction of edges, drop duplicates, sort canonically."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if noise_rate > 0:
        noisy = rng.random(rows.size) < noise_rate
        cols = cols.copy()
        labels = labels.copy()
        cols[noisy] = rng.integers(0, n_cols, size=int(noisy.sum()))
        labels[noisy] = NOISE
    order = np.lexsort((cols, rows))
    rows, cols, labels = rows[order], cols[order], labels[order]
    keep = np.ones(rows.size, dtype=bool)
    keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    return InteractionMatrix(n_rows, n_cols, rows[keep], cols[keep]), labels[keep]


def generate_synthetic(cfg):
    """Returns ``(dataset, truth)`` where dataset holds Y, H and R."""
    rng = np.random.default_rng(cfg.seed)
    t = cfg.true_intents
    n_items = cfg.n_items
    item_labels = np.arange(n_items) // cfg.items_per_intent
    clusters = [np.flatnonzero(item_labels == j) for j in range(t)]

    prefs = np.zeros((cfg.n_users, t))
    for u in range(cfg.n_users):
        fav = rng.choice(t, size=cfg.intents_per_user, replace=False)
        prefs[u, fav] = rng.dirichlet(np.ones(cfg.intents_per_user))

    bundle_intents = np.zeros((cfg.n_bundles, cfg.intents_per_bundle), dtype=np.int64)
    bi_rows, bi_cols, bi_lab = [], [], []
    sizes = np.full(cfg.intents_per_bundle, cfg.bundle_size // cfg.intents_per_bundle)
    sizes[: cfg.bundle_size % cfg.intents_per_bundle] += 1
    for b in range(cfg.n_bundles):
        intents = np.sort(rng.choice(t, size=cfg.intents_per_bundle, replace=False))
        bundle_intents[b] = intents
        for j, size in zip(intents, sizes):
            picked = rng.choice(clusters[j], size=size, replace=False)
            bi_rows.extend([b] * size)
            bi_cols.extend(picked.tolist())
            bi_lab.extend([j] * size)

    membership = np.zeros((cfg.n_bundles, t))
    np.put_along_axis(membership, bundle_intents, 1.0, axis=1)
    ub_rows, ub_cols = [], []
    ui_rows, ui_cols, ui_lab = [], [], []
    for u in range(cfg.n_users):
        affinity = membership @ prefs[u] + 1e-3
        chosen = rng.choice(cfg.n_bundles, size=cfg.bundles_per_user, replace=False,
                            p=affinity / affinity.sum())
        ub_rows.extend([u] * chosen.size)
        ub_cols.extend(chosen.tolist())
        intents = rng.choice(t, size=cfg.items_per_user, p=prefs[u])
        for j in intents:
            ui_rows.append(u)
            ui_cols.append(int(rng.choice(clusters[j])))
            ui_lab.append(int(j))

    y, _ = _finish(ub_rows, ub_cols, np.zeros(len(ub_rows)), cfg.n_users, cfg.n_bundles, cfg.noise_rate, rng)
    h, bi_labels = _finish(bi_rows, bi_cols, bi_lab, cfg.n_bundles, n_items, cfg.noise_rate, rng)
    r, ui_labels = _finish(ui_rows, ui_cols, ui_lab, cfg.n_users, n_items, cfg.noise_rate, rng)
    truth = GroundTruth(item_labels, prefs, bundle_intents, ui_labels, bi_labels)
    return BundleDataset(y, h, r, name="synthetic"), truth


def save_synthetic(dataset, truth, directory):
    """Write the three TSV files plus ``ground_truth.json``."""
    save_dataset(dataset, directory)
    with open(os.path.join(directory, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh)


def intent_alignment(confidences, labels):
    """Accuracy of per-edge argmax intents after optimal intent matching.

    ``confidences`` is ``(edges, K)`` normalised routing weights and
    ``labels`` the true intent per edge (``-1`` edges are ignored).  Model
    intents are matched one-to-one to true intents by the Hungarian algorithm
    on their co-occurrence counts.
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if confidences.ndim != 2 or confidences.shape[0] == 0:
        raise ValueError("empty confidence dump")
    if labels.shape[0] != confidences.shape[0]:
        raise ValueError("confidences and labels disagree on the number of edges")
    valid = labels != NOISE
    if not valid.any():
        raise ValueError("no labelled edges")
    assigned = confidences[valid].argmax(axis=1)
    truth = labels[valid]
    k = confidences.shape[1]
    t = int(truth.max()) + 1
    co = np.zeros((k, t), dtype=np.int64)
    np.add.at(co, (assigned, truth), 1)
    rows, cols = linear_sum_assignment(-co)
    return float(co[rows, cols].sum() / truth.size)
