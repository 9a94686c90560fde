"""Interaction files, per-user splits, BPR triple sampling and dataset statistics."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BoundsError, ConfigError, DataFormatError, StructuralError

logger = logging.getLogger(__name__)

USER_BUNDLE_FILE = "user_bundle.txt"
BUNDLE_ITEM_FILE = "bundle_item.txt"
USER_ITEM_FILE = "user_item.txt"

# Published statistics of the two benchmark datasets; densities in percent.
PUBLISHED_STATS = {
    "Youshu": {
        "users": 8039, "bundles": 4771, "items": 32770,
        "user_bundle": 51337, "bundle_item": 176667, "user_item": 138515,
        "user_bundle_density": 0.13, "bundle_item_density": 0.11, "user_item_density": 0.05,
    },
    "NetEase": {
        "users": 18528, "bundles": 22864, "items": 123628,
        "user_bundle": 302303, "bundle_item": 1778838, "user_item": 1128065,
        "user_bundle_density": 0.07, "bundle_item_density": 0.06, "user_item_density": 0.05,
    },
}


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Binary relation between ``n_rows`` left and ``n_cols`` right entities.

    Pairs are stored as two parallel int64 arrays, sorted lexicographically
    by ``(row, col)`` and free of duplicates.  Use :meth:`from_pairs` to build
    one from arbitrary input.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    # duplicates dropped while loading from disk
    dedup_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.rows.shape != self.cols.shape:
            raise StructuralError("rows and cols must have equal length")
        if self.rows.size:
            if self.rows.min() < 0 or self.cols.min() < 0:
                raise BoundsError("negative id in interaction pairs")
            if self.rows.max() >= self.n_rows:
                raise BoundsError(f"row id {self.rows.max()} >= n_rows {self.n_rows}")
            if self.cols.max() >= self.n_cols:
                raise BoundsError(f"col id {self.cols.max()} >= n_cols {self.n_cols}")

    @classmethod
    def from_pairs(cls, rows, cols, n_rows=None, n_cols=None):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if n_rows is None:
            n_rows = int(rows.max()) + 1 if rows.size else 0
        if n_cols is None:
            n_cols = int(cols.max()) + 1 if cols.size else 0
        if rows.size:
            order = np.lexsort((cols, rows))
            rows, cols = rows[order], cols[order]
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            rows, cols = rows[keep], cols[keep]
        rows.setflags(write=False)
        cols.setflags(write=False)
        return cls(int(n_rows), int(n_cols), rows, cols)

    @property
    def nnz(self):
        return int(self.rows.size)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def density(self):
        cells = self.n_rows * self.n_cols
        return self.nnz / cells if cells else 0.0

    def pair_set(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def keys(self):
        """Sorted scalar key ``row * n_cols + col`` per pair, for fast membership tests."""
        return self.rows * self.n_cols + self.cols

    def row_counts(self):
        return np.bincount(self.rows, minlength=self.n_rows)

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols))

    __hash__ = None

    def to_csr(self):
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, (self.rows, self.cols)), shape=self.shape)

    def select(self, mask):
        """Sub-relation keeping the pairs where ``mask`` is true."""
        rows, cols = self.rows[mask], self.cols[mask]
        return InteractionMatrix(self.n_rows, self.n_cols, rows, cols)

    def union(self, *others):
        rows = np.concatenate([self.rows] + [o.rows for o in others])
        cols = np.concatenate([self.cols] + [o.cols for o in others])
        return InteractionMatrix.from_pairs(rows, cols, self.n_rows, self.n_cols)


def load_interactions(path, expected_rows=None, expected_cols=None):
    """Read a file of ``row<TAB>col`` lines into an :class:`InteractionMatrix`.

    Blank lines are ignored and duplicate pairs are dropped (the number dropped
    is logged).  Without expected dimensions each axis is sized ``max_id + 1``.
    """
    rows, cols = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise DataFormatError(path, lineno, stripped)
            try:
                r, c = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(path, lineno, stripped) from None
            if r < 0 or c < 0:
                raise DataFormatError(path, lineno, stripped, "negative id")
            if expected_rows is not None and r >= expected_rows:
                raise BoundsError(f"{path}:{lineno}: row id {r} >= {expected_rows}")
            if expected_cols is not None and c >= expected_cols:
                raise BoundsError(f"{path}:{lineno}: col id {c} >= {expected_cols}")
            rows.append(r)
            cols.append(c)
    matrix = InteractionMatrix.from_pairs(rows, cols, expected_rows, expected_cols)
    dropped = len(rows) - matrix.nnz
    if dropped:
        logger.info("%s: dropped %d duplicate pairs", path, dropped)
    return InteractionMatrix(matrix.n_rows, matrix.n_cols, matrix.rows, matrix.cols, dropped)


def write_interactions(matrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r, c in zip(matrix.rows.tolist(), matrix.cols.tolist()):
            fh.write(f"{r}\t{c}\n")


@dataclass(frozen=True)
class BundleDataset:
    """The three relations of a bundle-recommendation dataset."""

    user_bundle: InteractionMatrix
    bundle_item: InteractionMatrix
    user_item: InteractionMatrix
    name: str = ""

    @property
    def n_users(self):
        return self.user_bundle.n_rows

    @property
    def n_bundles(self):
        return self.user_bundle.n_cols

    @property
    def n_items(self):
        return self.bundle_item.n_cols


def load_dataset(directory, name=None):
    """Load ``user_bundle.txt``, ``bundle_item.txt`` and ``user_item.txt``.

    Entity counts come from the published statistics when ``name`` is a known
    benchmark; otherwise they are inferred jointly across the three files.
    """
    directory = os.fspath(directory)
    if name is None:
        name = os.path.basename(os.path.normpath(directory))
    paths = [os.path.join(directory, f) for f in (USER_BUNDLE_FILE, BUNDLE_ITEM_FILE, USER_ITEM_FILE)]
    known = _lookup_published(name)
    if known is not None:
        m, o, n = known["users"], known["bundles"], known["items"]
        y = load_interactions(paths[0], m, o)
        h = load_interactions(paths[1], o, n)
        r = load_interactions(paths[2], m, n)
    else:
        y, h, r = (load_interactions(p) for p in paths)
        m = max(y.n_rows, r.n_rows)
        o = max(y.n_cols, h.n_rows)
        n = max(h.n_cols, r.n_cols)
        y = InteractionMatrix(m, o, y.rows, y.cols)
        h = InteractionMatrix(o, n, h.rows, h.cols)
        r = InteractionMatrix(m, n, r.rows, r.cols)
    return BundleDataset(y, h, r, name=name)


def save_dataset(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    write_interactions(dataset.user_bundle, os.path.join(directory, USER_BUNDLE_FILE))
    write_interactions(dataset.bundle_item, os.path.join(directory, BUNDLE_ITEM_FILE))
    write_interactions(dataset.user_item, os.path.join(directory, USER_ITEM_FILE))


@dataclass(frozen=True)
class SplitDataset:
    train: InteractionMatrix
    val: InteractionMatrix
    test: InteractionMatrix
    seed: int
    ratios: tuple = (0.7, 0.1, 0.2)

    @property
    def full(self):
        return self.train.union(self.val, self.test)


def _check_ratios(ratios):
    ratios = tuple(float(x) for x in ratios)
    if len(ratios) != 3 or any(not x > 0 for x in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    return ratios


def split_interactions(matrix, ratios=(0.7, 0.1, 0.2), seed=0):
    """Random per-user partition of each user's pairs into train/val/test.

    Validation and test sizes are ``floor(n * ratio)``; train takes the
    remainder, so it is never empty for a user with at least one pair.
    """
    ratios = _check_ratios(ratios)
    rng = np.random.default_rng(seed)
    keys = rng.random(matrix.nnz)
    order = np.lexsort((keys, matrix.rows))
    counts = matrix.row_counts()
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    # rank of each (sorted) pair inside its user's shuffled list
    rank = np.arange(matrix.nnz) - np.repeat(starts, counts)
    n_val = np.floor(counts * ratios[1] + 1e-9).astype(np.int64)
    n_test = np.floor(counts * ratios[2] + 1e-9).astype(np.int64)
    n_train = counts - n_val - n_test
    user = matrix.rows[order]
    part = np.zeros(matrix.nnz, dtype=np.int8)
    part[rank >= n_train[user]] = 1
    part[rank >= (n_train + n_val)[user]] = 2
    assignment = np.empty(matrix.nnz, dtype=np.int8)
    assignment[order] = part
    return SplitDataset(
        train=matrix.select(assignment == 0),
        val=matrix.select(assignment == 1),
        test=matrix.select(assignment == 2),
        seed=seed,
        ratios=ratios,
    )


def sample_triples(split, rng_seed):
    """One ``(user, pos_bundle, neg_bundle)`` row per train pair.

    Negatives are drawn uniformly from bundles the user never interacted with
    in any split, by rejection.  Users who interacted with every bundle are
    skipped with a warning.
    """
    train = split.train
    if train.nnz == 0:
        raise ConfigError("cannot sample triples from an empty train split")
    full = split.full
    n_bundles = full.n_cols
    saturated = full.row_counts() >= n_bundles
    users, pos = train.rows, train.cols
    if saturated.any():
        keep = ~saturated[users]
        skipped = np.unique(users[~keep]).size
        if skipped:
            logger.warning("skipping %d users who interacted with every bundle", skipped)
        users, pos = users[keep], pos[keep]
    full_keys = full.keys()
    rng = np.random.default_rng(rng_seed)
    neg = rng.integers(0, n_bundles, size=users.size)
    pending = np.arange(users.size)
    while pending.size:
        cand_keys = users[pending] * n_bundles + neg[pending]
        idx = np.searchsorted(full_keys, cand_keys)
        idx = np.minimum(idx, full_keys.size - 1)
        bad = full_keys[idx] == cand_keys
        pending = pending[bad]
        neg[pending] = rng.integers(0, n_bundles, size=pending.size)
    return np.stack([users, pos, neg], axis=1)


@dataclass
class StatsReport:
    dataset: str
    users: int
    bundles: int
    items: int
    user_bundle: int
    bundle_item: int
    user_item: int
    user_bundle_density: float
    bundle_item_density: float
    user_item_density: float
    mismatches: dict = field(default_factory=dict)

    @property
    def matches_published(self):
        return not self.mismatches

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _lookup_published(name):
    for key, stats in PUBLISHED_STATS.items():
        if name and name.lower() == key.lower():
            return stats
    return None


def validate_stats(y, h, r, dataset_name=""):
    """Entity counts, pair counts and densities (percent, 2 decimals).

    For the two published benchmarks every field is compared with the
    published table and disagreements are listed in ``mismatches``.
    """
    if y.n_cols != h.n_rows or y.n_rows != r.n_rows or h.n_cols != r.n_cols:
        raise StructuralError(
            f"inconsistent dimensions: Y{y.shape}, H{h.shape}, R{r.shape}"
        )
    report = StatsReport(
        dataset=dataset_name,
        users=y.n_rows,
        bundles=y.n_cols,
        items=h.n_cols,
        user_bundle=y.nnz,
        bundle_item=h.nnz,
        user_item=r.nnz,
        user_bundle_density=round(100 * y.density, 2),
        bundle_item_density=round(100 * h.density, 2),
        user_item_density=round(100 * r.density, 2),
    )
    published = _lookup_published(dataset_name)
    if published is not None:
        for key, expected in published.items():
            actual = getattr(report, key)
            if actual != expected:
                report.mismatches[key] = {"expected": expected, "actual": actual}
    return report
