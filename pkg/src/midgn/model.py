"""Forward pass, scoring, the two losses, and the alternating training epoch."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import contrast, crossview, disentangle
from .data import sample_triples
from .errors import ConfigError, TrainingDivergedError
from .graph import BipartiteGraph
from .params import GradientBuffer, OptimizerConfig, adam_step, save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    d: int = 64
    k: int = 4
    layers: int = 3
    routing_iters: int = 2
    tau: float = 1.0
    l2: float = 1e-5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4096
    epochs: int = 100
    no_contrast: bool = False
    no_local: bool = False
    no_global: bool = False
    seed: int = 0
    init_scheme: str = "xavier"
    # "batch": BPR then contrast update on every batch; "epoch": alternate whole epochs
    alternation: str = "batch"
    contrast_every: int = 1
    symmetric_contrast: bool = False
    eval_every: int = 5
    patience: int = 0
    split_ratios: tuple = (0.7, 0.1, 0.2)
    split_seed: int = 0
    ks: tuple = (20, 40, 80)

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        self.ks = tuple(int(k) for k in self.ks)
        if self.k < 1 or self.d % self.k:
            raise ConfigError(f"d={self.d} must be divisible by k={self.k}")
        if self.layers < 1 or self.routing_iters < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("layers, routing_iters and batch_size must be >= 1")
        if self.contrast_every < 1:
            raise ConfigError("contrast_every must be >= 1")
        if self.no_local and self.no_global:
            raise ConfigError("no_local and no_global cannot both be set")
        if self.alternation not in ("batch", "epoch"):
            raise ConfigError(f"alternation must be 'batch' or 'epoch', got {self.alternation!r}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        self.optimizer  # validates the optimizer fields

    @property
    def optimizer(self):
        return OptimizerConfig(self.lr, self.beta1, self.beta2, self.eps, self.l2)

    @property
    def variant(self):
        if self.no_contrast:
            return "w/o contra."
        if self.no_local:
            return "w/o local"
        if self.no_global:
            return "w/o global"
        return "MIDGN"

    def to_dict(self):
        out = asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        out["ks"] = list(self.ks)
        return out

    @classmethod
    def from_dict(cls, values):
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class ModelGraphs:
    ui: BipartiteGraph
    bi: BipartiteGraph
    ub: BipartiteGraph

    def check(self, store):
        m, o, n = store.shape
        if (self.ui.left_count, self.ui.right_count) != (m, n):
            raise ConfigError("user-item graph does not match the parameter store")
        if (self.bi.left_count, self.bi.right_count) != (o, n):
            raise ConfigError("bundle-item graph does not match the parameter store")
        if (self.ub.left_count, self.ub.right_count) != (m, o):
            raise ConfigError("user-bundle graph does not match the parameter store")


def build_graphs(dataset, split):
    """Propagation graphs; the user-bundle graph uses train pairs only."""
    return ModelGraphs(
        ui=BipartiteGraph.from_matrix(dataset.user_item),
        bi=BipartiteGraph.from_matrix(dataset.bundle_item),
        ub=BipartiteGraph.from_matrix(split.train),
    )


@dataclass
class ForwardOutputs:
    e_u: np.ndarray
    v_u: np.ndarray
    e_b: np.ndarray
    v_b: np.ndarray
    k: int
    user_tapes: list = field(default=None, repr=False)
    bundle_tapes: list = field(default=None, repr=False)
    # normalised confidences of the last iteration of every layer, when recorded
    user_confidences: list = field(default=None, repr=False)
    bundle_confidences: list = field(default=None, repr=False)

    @property
    def n_users(self):
        return self.e_u.shape[0]

    @property
    def n_bundles(self):
        return self.e_b.shape[0]


def full_forward(store, graphs, cfg, keep_tape=True, record_confidences=False):
    graphs.check(store)
    items = store.item_emb
    k, layers, t = store.k, cfg.layers, cfg.routing_iters
    user_tapes = [] if keep_tape else None
    bundle_tapes = [] if keep_tape else None
    user_conf = [] if record_confidences else None
    bundle_conf = [] if record_confidences else None
    if cfg.no_global:
        e_u = disentangle.plain_stack(graphs.ui, items, k, layers)
    else:
        e_u = disentangle.disentangle_stack(graphs.ui, store.chunks("user_emb"), items, layers, t,
                                            tapes=user_tapes, record=user_conf)
    if cfg.no_local:
        e_b = disentangle.plain_stack(graphs.bi, items, k, layers)
    else:
        e_b = disentangle.disentangle_stack(graphs.bi, store.chunks("bundle_emb"), items, layers, t,
                                            tapes=bundle_tapes, record=bundle_conf)
    cv = crossview.cross_propagate(graphs.ub, e_u, e_b)
    m, o = e_u.shape[0], e_b.shape[0]
    return ForwardOutputs(
        e_u=e_u.reshape(m, -1), v_u=cv.v_u.reshape(m, -1),
        e_b=e_b.reshape(o, -1), v_b=cv.v_b.reshape(o, -1),
        k=k, user_tapes=user_tapes, bundle_tapes=bundle_tapes,
        user_confidences=user_conf, bundle_confidences=bundle_conf,
    )


def backward(store, graphs, cfg, out, g_eu, g_vu, g_eb, g_vb, buffer=None):
    """Push output gradients back to the parameters; returns a filled GradientBuffer."""
    if out.user_tapes is None:
        raise ConfigError("forward pass was run without a tape")
    if buffer is None:
        buffer = GradientBuffer(store)
    m, o = out.n_users, out.n_bundles
    k = store.k
    g_eu_cv, g_eb_cv = crossview.cross_propagate_backward(graphs.ub, g_vu, g_vb)
    g_eu = (g_eu + g_eu_cv).reshape(m, k, -1)
    g_eb = (g_eb + g_eb_cv).reshape(o, k, -1)
    items = store.item_emb
    g_item = np.zeros_like(items)
    if cfg.no_global:
        g_item += disentangle.plain_stack_backward(graphs.ui, g_eu, cfg.layers)
    else:
        g_u0, gi = disentangle.disentangle_stack_backward(graphs.ui, out.user_tapes, g_eu, items)
        buffer.add("user_emb", g_u0.reshape(m, -1))
        g_item += gi
    if cfg.no_local:
        g_item += disentangle.plain_stack_backward(graphs.bi, g_eb, cfg.layers)
    else:
        g_b0, gi = disentangle.disentangle_stack_backward(graphs.bi, out.bundle_tapes, g_eb, items)
        buffer.add("bundle_emb", g_b0.reshape(o, -1))
        g_item += gi
    buffer.add("item_emb", g_item)
    return buffer


def score_pairs(out, users, bundles):
    """``(e_u + v_u) . (e_b + v_b)`` with ``+`` meaning concatenation."""
    users = np.asarray(users, dtype=np.int64)
    bundles = np.asarray(bundles, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= out.n_users):
        raise IndexError("user id out of range")
    if bundles.size and (bundles.min() < 0 or bundles.max() >= out.n_bundles):
        raise IndexError("bundle id out of range")
    return (np.einsum("nd,nd->n", out.e_u[users], out.e_b[bundles])
            + np.einsum("nd,nd->n", out.v_u[users], out.v_b[bundles]))


def score_users(out, users):
    """Dense ``(len(users), n_bundles)`` score block."""
    return out.e_u[users] @ out.e_b.T + out.v_u[users] @ out.v_b.T


def predict_all(out, user, exclude=()):
    """Scores of every bundle for ``user`` with ``exclude`` masked to -inf."""
    if not 0 <= user < out.n_users:
        raise IndexError(f"user id {user} out of range")
    scores = score_users(out, np.array([user]))[0]
    scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
    return scores


def _scatter(rows, values, n, width):
    out = np.zeros((n, width))
    np.add.at(out, rows, values)
    return out


def bpr_loss(out, triples, store, l2, graphs=None, cfg=None):
    """``sum -ln sigmoid(y_pos - y_neg) + l2 * ||rows||^2`` over a triple batch.

    The L2 term covers the user and bundle embedding rows appearing in the
    batch.  When ``graphs`` and ``cfg`` are given the gradient is carried back
    to the parameters and returned as a :class:`GradientBuffer`; otherwise the
    second return value is ``None``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if triples.shape[0] == 0:
        raise ConfigError("empty BPR batch")
    u, p, n = triples[:, 0], triples[:, 1], triples[:, 2]
    diff = score_pairs(out, u, p) - score_pairs(out, u, n)
    loss = float(np.sum(np.logaddexp(0.0, -diff)))
    users = np.unique(u)
    bundles = np.unique(np.concatenate([p, n]))
    reg_u = store.user_emb[users]
    reg_b = store.bundle_emb[bundles]
    loss += l2 * float(np.sum(reg_u * reg_u) + np.sum(reg_b * reg_b))
    if graphs is None:
        return loss, None

    # d/d diff of softplus(-diff) = -sigmoid(-diff)
    g_diff = -0.5 * (1.0 - np.tanh(0.5 * diff))
    gd = g_diff[:, None]
    m, o, d = out.n_users, out.n_bundles, out.e_u.shape[1]
    g_eu = _scatter(u, gd * (out.e_b[p] - out.e_b[n]), m, d)
    g_vu = _scatter(u, gd * (out.v_b[p] - out.v_b[n]), m, d)
    g_eb = _scatter(p, gd * out.e_u[u], o, d) - _scatter(n, gd * out.e_u[u], o, d)
    g_vb = _scatter(p, gd * out.v_u[u], o, d) - _scatter(n, gd * out.v_u[u], o, d)
    buffer = backward(store, graphs, cfg, out, g_eu, g_vu, g_eb, g_vb)
    if l2:
        buffer.add_rows("user_emb", users, 2.0 * l2 * reg_u)
        buffer.add_rows("bundle_emb", bundles, 2.0 * l2 * reg_b)
    return loss, buffer


def contrast_loss(out, users, bundles, tau=1.0, symmetric=False, store=None, graphs=None, cfg=None):
    """InfoNCE over the chunks of the given (distinct) users and bundles, pooled."""
    users = np.unique(np.asarray(users, dtype=np.int64))
    bundles = np.unique(np.asarray(bundles, dtype=np.int64))
    k = out.k
    e = np.concatenate([out.e_u[users], out.e_b[bundles]]).reshape(users.size + bundles.size, k, -1)
    v = np.concatenate([out.v_u[users], out.v_b[bundles]]).reshape(e.shape)
    loss, g_e, g_v = contrast.info_nce_loss(e, v, tau, symmetric)
    if graphs is None:
        return loss, None
    nu = users.size
    g_e = g_e.reshape(e.shape[0], -1)
    g_v = g_v.reshape(e.shape[0], -1)
    m, o, d = out.n_users, out.n_bundles, out.e_u.shape[1]
    g_eu = np.zeros((m, d))
    g_vu = np.zeros((m, d))
    g_eb = np.zeros((o, d))
    g_vb = np.zeros((o, d))
    g_eu[users] = g_e[:nu]
    g_vu[users] = g_v[:nu]
    g_eb[bundles] = g_e[nu:]
    g_vb[bundles] = g_v[nu:]
    return loss, backward(store, graphs, cfg, out, g_eu, g_vu, g_eb, g_vb)


def bpr_update(store, graphs, cfg, batch):
    out = full_forward(store, graphs, cfg)
    loss, grads = bpr_loss(out, batch, store, cfg.l2, graphs, cfg)
    if not np.isfinite(loss):
        return loss
    adam_step(store, grads, cfg.optimizer)
    return loss


def contrast_update(store, graphs, cfg, batch):
    out = full_forward(store, graphs, cfg)
    users = batch[:, 0]
    bundles = batch[:, 1:].ravel()
    loss, grads = contrast_loss(out, users, bundles, cfg.tau, cfg.symmetric_contrast, store, graphs, cfg)
    if not np.isfinite(loss):
        return loss
    adam_step(store, grads, cfg.optimizer)
    return loss


@dataclass
class EpochMetrics:
    epoch: int
    bpr_loss: float
    contrast_loss: float
    n_batches: int
    bpr_updates: int
    contrast_updates: int
    wall_time: float
    bpr_batch_losses: list = field(default_factory=list, repr=False)

    def to_dict(self):
        out = asdict(self)
        del out["bpr_batch_losses"]
        return out


def epoch_batches(split, cfg, epoch_index):
    """Freshly sampled, shuffled triples cut into mini-batches."""
    triples = sample_triples(split, rng_seed=[cfg.seed, epoch_index, 0])
    rng = np.random.default_rng([cfg.seed, epoch_index, 1])
    triples = triples[rng.permutation(triples.shape[0])]
    return [triples[a:a + cfg.batch_size] for a in range(0, triples.shape[0], cfg.batch_size)]


def train_epoch(store, graphs, split, cfg, epoch_index, diverge_dir=None):
    """One pass over freshly sampled triples with alternating BPR / contrast updates."""
    start = time.perf_counter()
    batches = epoch_batches(split, cfg, epoch_index)
    do_bpr = cfg.no_contrast or cfg.alternation == "batch" or epoch_index % 2 == 0
    do_contrast = not cfg.no_contrast and (cfg.alternation == "batch" or epoch_index % 2 == 1)
    bpr_losses, con_losses = [], []
    for j, batch in enumerate(batches):
        if do_bpr:
            loss = bpr_update(store, graphs, cfg, batch)
            _check_loss(loss, "bpr", store, cfg, batch, epoch_index, j, diverge_dir)
            bpr_losses.append(loss)
        if do_contrast and j % cfg.contrast_every == 0:
            loss = contrast_update(store, graphs, cfg, batch)
            _check_loss(loss, "contrast", store, cfg, batch, epoch_index, j, diverge_dir)
            con_losses.append(loss)
    return EpochMetrics(
        epoch=epoch_index,
        bpr_loss=float(np.mean(bpr_losses)) if bpr_losses else float("nan"),
        contrast_loss=float(np.mean(con_losses)) if con_losses else float("nan"),
        n_batches=len(batches),
        bpr_updates=len(bpr_losses),
        contrast_updates=len(con_losses),
        wall_time=time.perf_counter() - start,
        bpr_batch_losses=bpr_losses,
    )


def _check_loss(loss, kind, store, cfg, batch, epoch_index, batch_index, diverge_dir):
    if np.isfinite(loss):
        return
    where = f"epoch {epoch_index} batch {batch_index}"
    if diverge_dir is not None:
        os.makedirs(diverge_dir, exist_ok=True)
        path = os.path.join(diverge_dir, f"diverged_e{epoch_index}_b{batch_index}.npz")
        save_checkpoint(store, path, cfg.to_dict(),
                        extra={"loss": kind, "epoch": epoch_index, "batch": batch_index,
                               "triples": batch.tolist()})
        where += f", state saved to {path}"
    raise TrainingDivergedError(f"{kind} loss is {loss} at {where}")
