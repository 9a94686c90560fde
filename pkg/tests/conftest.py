import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from midgn.data import BundleDataset, InteractionMatrix, SplitDataset
from midgn.model import build_graphs
from midgn.params import ParameterStore

TOY_UI = [(0, 0), (0, 1), (1, 1), (1, 2)]
TOY_BI = [(0, 0), (0, 2), (1, 1)]
TOY_UB = [(0, 0), (1, 0), (1, 1)]


def matrix(pairs, n_rows, n_cols):
    rows = [p[0] for p in pairs]
    cols = [p[1] for p in pairs]
    return InteractionMatrix.from_pairs(rows, cols, n_rows, n_cols)


def toy_dataset():
    """2 users, 2 bundles, 3 items."""
    return BundleDataset(matrix(TOY_UB, 2, 2), matrix(TOY_BI, 2, 3), matrix(TOY_UI, 2, 3), "toy")


def toy_split(dataset):
    ub = dataset.user_bundle
    empty = InteractionMatrix.from_pairs([], [], ub.n_rows, ub.n_cols)
    return SplitDataset(ub, empty, empty, seed=0)


def toy_store(seed=0, d=4, k=2, scale=0.8):
    rng = np.random.default_rng(seed)
    return ParameterStore(rng.normal(0, scale, (2, d)), rng.normal(0, scale, (2, d)),
                          rng.normal(0, scale, (3, d // k)), k)


@pytest.fixture
def toy():
    ds = toy_dataset()
    split = toy_split(ds)
    return ds, split, build_graphs(ds, split)


# criterion number -> (title, status, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} [{status}] {title}: {detail}")
