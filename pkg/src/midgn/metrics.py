"""Recall@K and NDCG@K under full ranking of all non-train bundles."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import num_threads
from .model import score_users


def recall_at_k(ranked, relevant, k):
    relevant = set(relevant)
    hits = sum(1 for b in list(ranked)[:k] if b in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k):
    relevant = set(relevant)
    # explicit left-to-right sums (builtin sum() compensates on newer Pythons)
    dcg = 0.0
    for p, b in enumerate(list(ranked)[:k]):
        if b in relevant:
            dcg += 1.0 / math.log2(p + 2)
    idcg = 0.0
    for p in range(min(k, len(relevant))):
        idcg += 1.0 / math.log2(p + 2)
    return dcg / idcg


def rank_bundles(scores):
    """Row-wise descending order; ties go to the smaller bundle id."""
    return np.argsort(-scores, axis=-1, kind="stable")


@dataclass
class RankingReport:
    ks: tuple
    users: np.ndarray = field(repr=False)
    topk: np.ndarray = field(repr=False)
    recall: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)

    @property
    def n_users(self):
        return int(self.users.size)

    def metric(self, name, k):
        return {"recall": self.recall, "ndcg": self.ndcg}[name.lower()][k]

    def to_dict(self, include_lists=False):
        out = {
            "ks": list(self.ks),
            "n_users": self.n_users,
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
        }
        if include_lists:
            out["topk"] = {int(u): row.tolist() for u, row in zip(self.users, self.topk)}
        return out

    def to_json(self, include_lists=False, **kwargs):
        return json.dumps(self.to_dict(include_lists), **kwargs)

    def csv_rows(self, dataset="", config=""):
        rows = []
        for k in self.ks:
            rows.append({"dataset": dataset, "config": config, "k": k, "metric": "recall", "value": self.recall[k]})
            rows.append({"dataset": dataset, "config": config, "k": k, "metric": "ndcg", "value": self.ndcg[k]})
        return rows

    def to_csv(self, dataset="", config=""):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["dataset", "config", "k", "metric", "value"])
        writer.writeheader()
        writer.writerows(self.csv_rows(dataset, config))
        return buf.getvalue()


def _group(matrix):
    counts = matrix.row_counts()
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return indptr, matrix.cols


def evaluate_scores(score_fn, n_users, n_bundles, train, target, ks=(20, 40, 80), block=1024):
    """Metrics from a ``score_fn(users) -> (len(users), n_bundles)`` callable.

    ``train`` pairs are masked out of the ranking; users with no ``target``
    pairs are skipped.
    """
    ks = tuple(sorted(int(k) for k in ks))
    kmax = min(max(ks), n_bundles)
    tr_ptr, tr_cols = _group(train)
    te_ptr, te_cols = _group(target)
    users = np.flatnonzero(np.diff(te_ptr) > 0)
    # same per-position values as ndcg_at_k; cumsum keeps summation sequential
    discounts = np.array([1.0 / math.log2(p + 2) for p in range(max(kmax, n_bundles))])
    cum_disc = np.concatenate([[0.0], np.cumsum(discounts)])

    blocks = [users[a:a + block] for a in range(0, users.size, block)]

    def run(ub):
        scores = np.array(score_fn(ub), dtype=np.float64)
        rel = np.zeros((ub.size, n_bundles), dtype=bool)
        for j, u in enumerate(ub):
            scores[j, tr_cols[tr_ptr[u]:tr_ptr[u + 1]]] = -np.inf
            rel[j, te_cols[te_ptr[u]:te_ptr[u + 1]]] = True
        top = rank_bundles(scores)[:, :kmax]
        hits = np.take_along_axis(rel, top, axis=1)
        n_rel = rel.sum(axis=1)
        rec, ndcg = {}, {}
        for k in ks:
            kk = min(k, kmax)
            h = hits[:, :kk]
            rec[k] = h.sum(axis=1) / n_rel
            dcg = np.cumsum(h * discounts[:kk], axis=1)[:, -1] if kk else np.zeros(ub.size)
            ndcg[k] = dcg / cum_disc[np.minimum(kk, n_rel)]
        return top, rec, ndcg

    threads = num_threads()
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(ub) for ub in blocks]

    if results:
        topk = np.concatenate([r[0] for r in results])
        rec = {k: np.concatenate([r[1][k] for r in results]) for k in ks}
        ndcg = {k: np.concatenate([r[2][k] for r in results]) for k in ks}
    else:
        topk = np.zeros((0, kmax), dtype=np.int64)
        rec = {k: np.zeros(0) for k in ks}
        ndcg = {k: np.zeros(0) for k in ks}
    return RankingReport(
        ks=ks,
        users=users,
        topk=topk,
        recall={k: _mean(rec[k]) for k in ks},
        ndcg={k: _mean(ndcg[k]) for k in ks},
    )


def _mean(values):
    # fsum is exact, so the mean does not depend on block order or threading
    return math.fsum(values.tolist()) / values.size if values.size else 0.0


def evaluate(out, split, ks=(20, 40, 80), part="test", block=1024):
    """Rank all bundles per user (train pairs masked) against ``split.<part>``."""
    target = getattr(split, part)
    return evaluate_scores(lambda ub: score_users(out, ub), out.n_users, out.n_bundles,
                           split.train, target, ks, block)
