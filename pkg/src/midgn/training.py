"""Multi-epoch fitting with validation-based model selection, logs and checkpoints."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

from .data import split_interactions
from .metrics import evaluate
from .model import build_graphs, full_forward, train_epoch
from .params import init_parameters, save_checkpoint

logger = logging.getLogger(__name__)

SELECT_K = 20


@dataclass
class FitResult:
    store: object
    best_epoch: int
    best_val: object
    test: object
    history: list = field(default_factory=list)
    split: object = None
    graphs: object = None


def fit(dataset, cfg, out_dir=None, split=None, checkpoint_every=0, log_fn=None):
    """Train ``cfg.epochs`` epochs and return the parameters with the best validation Recall@20.

    With ``out_dir`` set, ``train_log.jsonl``, ``best.npz`` and periodic
    ``epoch_XXXX.npz`` checkpoints are written there.
    """
    if split is None:
        split = split_interactions(dataset.user_bundle, cfg.split_ratios, cfg.split_seed)
    graphs = build_graphs(dataset, split)
    store = init_parameters(dataset.n_users, dataset.n_bundles, dataset.n_items,
                            cfg.d, cfg.k, seed=cfg.seed, scheme=cfg.init_scheme)
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8")
    ks = tuple(sorted(set(cfg.ks) | {SELECT_K}))
    best_store, best_epoch, best_val, best_recall = store.copy(), 0, None, -1.0
    stale = 0
    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            metrics = train_epoch(store, graphs, split, cfg, epoch, diverge_dir=out_dir)
            record = metrics.to_dict()
            evaluate_now = epoch % cfg.eval_every == 0 or epoch == cfg.epochs
            if evaluate_now and split.val.nnz:
                out = full_forward(store, graphs, cfg, keep_tape=False)
                val = evaluate(out, split, ks, part="val")
                record["val_recall@20"] = val.recall[SELECT_K]
                record["val_ndcg@20"] = val.ndcg[SELECT_K]
                if val.recall[SELECT_K] > best_recall:
                    best_recall, best_val, best_epoch = val.recall[SELECT_K], val, epoch
                    best_store = store.copy()
                    stale = 0
                    if out_dir is not None:
                        save_checkpoint(store, os.path.join(out_dir, "best.npz"), cfg.to_dict(),
                                        extra={"epoch": epoch, "val_recall@20": best_recall})
                else:
                    stale += 1
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if log_fn is not None:
                log_fn(record)
            logger.info("epoch %d: %s", epoch, record)
            if out_dir is not None and checkpoint_every and epoch % checkpoint_every == 0:
                save_checkpoint(store, os.path.join(out_dir, f"epoch_{epoch:04d}.npz"), cfg.to_dict(),
                                extra={"epoch": epoch})
            if cfg.patience and stale >= cfg.patience:
                logger.info("early stop after %d evaluations without improvement", stale)
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    if best_val is None:
        best_store, best_epoch = store.copy(), len(history)
    out = full_forward(best_store, graphs, cfg, keep_tape=False)
    test = evaluate(out, split, ks, part="test")
    return FitResult(best_store, best_epoch, best_val, test, history, split, graphs)
