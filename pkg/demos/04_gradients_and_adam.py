"""
Checking gradients and taking sparse Adam steps
===============================================

The backward pass is written by hand through every routing iteration.  A
central finite-difference check confirms it; sparse Adam then only moves the
rows a batch touched.
"""

import numpy as np

from midgn import InteractionMatrix, ModelConfig, build_graphs, full_forward, init_parameters
from midgn.data import BundleDataset, SplitDataset
from midgn.model import bpr_loss
from midgn.params import adam_step, finite_difference_check

y = InteractionMatrix.from_pairs([0, 1, 1, 2], [0, 0, 1, 2], 3, 3)
h = InteractionMatrix.from_pairs([0, 0, 1, 2, 2], [0, 2, 1, 3, 0], 3, 4)
r = InteractionMatrix.from_pairs([0, 0, 1, 2], [0, 1, 2, 3], 3, 4)
ds = BundleDataset(y, h, r, "tiny")
empty = y.select(np.zeros(y.nnz, bool))
split = SplitDataset(y, empty, empty, seed=0)
graphs = build_graphs(ds, split)

cfg = ModelConfig(d=6, k=3, layers=2, routing_iters=2, l2=1e-3)
store = init_parameters(3, 3, 4, 6, 3, seed=1, scheme="normal")
store.user_emb *= 50  # bigger values make routing non-trivial
triples = np.array([[0, 0, 1], [1, 1, 2]])

out = full_forward(store, graphs, cfg)
loss, grads = bpr_loss(out, triples, store, cfg.l2, graphs, cfg)
print("BPR loss", loss)


def f(st):
    return bpr_loss(full_forward(st, graphs, cfg, keep_tape=False), triples, st, cfg.l2)[0]


coords = [(n, i, j) for n, p in store.params().items() for i in range(p.shape[0]) for j in range(p.shape[1])]
report = finite_difference_check(f, grads.grads, store, coords)
print(f"{len(coords)} coordinates, max relative error {report.max_rel_error:.2e}, ok={report.ok}")

before = store.bundle_emb.copy()
adam_step(store, grads, cfg.optimizer)
print("bundle rows moved:", np.flatnonzero((store.bundle_emb != before).any(axis=1)))
print("rows with gradient:", grads.touched_rows("bundle_emb"))
