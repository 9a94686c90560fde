"""Trainable embeddings, gradient buffers, sparse Adam and a finite-difference checker."""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteGradientError

PARAM_NAMES = ("user_emb", "bundle_emb", "item_emb")
CHECKPOINT_VERSION = 1


class ParameterStore:
    """User/bundle tables of width ``d`` split into ``k`` chunks, plus item table of width ``d/k``.

    Adam moments live next to the parameters under the same names.
    """

    def __init__(self, user_emb, bundle_emb, item_emb, k, seed=None, step=0, moments=None):
        self.user_emb = np.ascontiguousarray(user_emb, dtype=np.float64)
        self.bundle_emb = np.ascontiguousarray(bundle_emb, dtype=np.float64)
        self.item_emb = np.ascontiguousarray(item_emb, dtype=np.float64)
        self.k = int(k)
        self.d = self.user_emb.shape[1]
        if self.d % self.k:
            raise ConfigError(f"embedding size {self.d} not divisible by {self.k} intents")
        if self.item_emb.shape[1] != self.d // self.k:
            raise ConfigError("item embedding width must equal d / k")
        self.seed = seed
        self.step = int(step)
        if moments is None:
            moments = {
                name: (np.zeros_like(p), np.zeros_like(p)) for name, p in self.params().items()
            }
        self.moments = moments

    @property
    def chunk_width(self):
        return self.d // self.k

    @property
    def shape(self):
        """``(M, O, N)``: numbers of users, bundles and items."""
        return (self.user_emb.shape[0], self.bundle_emb.shape[0], self.item_emb.shape[0])

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def chunks(self, name):
        """``(rows, k, d/k)`` view of a user or bundle table; writes go through."""
        table = getattr(self, name)
        return table.reshape(table.shape[0], self.k, self.chunk_width)

    def copy(self):
        moments = {n: (m.copy(), v.copy()) for n, (m, v) in self.moments.items()}
        return ParameterStore(self.user_emb.copy(), self.bundle_emb.copy(), self.item_emb.copy(),
                              self.k, self.seed, self.step, moments)

    def all_finite(self):
        return all(np.isfinite(p).all() for p in self.params().values())

    def squared_norm(self):
        return sum(float(np.sum(p * p)) for p in self.params().values())


def init_parameters(m, o, n, d, k_intents, seed=0, scheme="xavier"):
    """Fresh store with every chunk drawn independently.

    ``scheme="xavier"`` draws each chunk from U(-a, a) with
    ``a = sqrt(6 / (w + w))`` for chunk width ``w``; ``scheme="normal"`` uses
    N(0, 0.01**2).
    """
    if k_intents < 1 or d % k_intents:
        raise ConfigError(f"embedding size {d} not divisible by {k_intents} intents")
    w = d // k_intents
    rng = np.random.default_rng(seed)

    def draw(rows):
        if scheme == "xavier":
            bound = np.sqrt(6.0 / (w + w))
            return rng.uniform(-bound, bound, size=(rows, w))
        if scheme == "normal":
            return rng.normal(0.0, 0.01, size=(rows, w))
        raise ConfigError(f"unknown init scheme {scheme!r}")

    user = np.concatenate([draw(m) for _ in range(k_intents)], axis=1)
    bundle = np.concatenate([draw(o) for _ in range(k_intents)], axis=1)
    item = draw(n)
    return ParameterStore(user, bundle, item, k_intents, seed=seed)


class GradientBuffer:
    """Dense accumulators shaped like the store, with a per-row touched mask."""

    def __init__(self, store):
        self.grads = {name: np.zeros_like(p) for name, p in store.params().items()}
        self.touched = {name: np.zeros(p.shape[0], dtype=bool) for name, p in store.params().items()}

    def __getitem__(self, name):
        return self.grads[name]

    def add(self, name, grad):
        """Add a dense gradient; rows with any non-zero entry count as touched."""
        grad = np.asarray(grad).reshape(self.grads[name].shape)
        self.grads[name] += grad
        self.touched[name] |= np.any(grad != 0, axis=1)

    def add_rows(self, name, rows, values):
        rows = np.asarray(rows, dtype=np.int64)
        values = np.asarray(values).reshape(rows.size, -1)
        np.add.at(self.grads[name], rows, values)
        self.touched[name][rows] = True

    def touched_rows(self, name):
        return np.flatnonzero(self.touched[name])

    def zero(self):
        for name in self.grads:
            self.grads[name][:] = 0.0
            self.touched[name][:] = False


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_coefficient: float = 1e-5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.l2_coefficient >= 0:
            raise ConfigError("l2_coefficient must be non-negative")


def adam_step(store, grads, cfg):
    """One Adam update applied only to rows the buffer marks as touched.

    Bias correction uses the store's global step counter, which advances by
    one per call.
    """
    for name, g in grads.grads.items():
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g))
            raise NonFiniteGradientError(
                f"{name}: {len(bad)} non-finite gradient entries, first at row {bad[0][0]} col {bad[0][1]}"
            )
    store.step += 1
    t = store.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, param in store.params().items():
        rows = grads.touched_rows(name)
        if rows.size == 0:
            continue
        g = grads.grads[name][rows]
        m, v = store.moments[name]
        m_rows = cfg.beta1 * m[rows] + (1.0 - cfg.beta1) * g
        v_rows = cfg.beta2 * v[rows] + (1.0 - cfg.beta2) * (g * g)
        m[rows] = m_rows
        v[rows] = v_rows
        param[rows] -= cfg.learning_rate * (m_rows / bc1) / (np.sqrt(v_rows / bc2) + cfg.epsilon)
    return store


@dataclass
class FDReport:
    coordinates: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tol: float
    passed: np.ndarray = field(repr=False)

    @property
    def max_rel_error(self):
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def ok(self):
        return bool(self.passed.all())


def finite_difference_check(loss_fn, analytic, store, coords, h=1e-4, tol=1e-3, floor=1e-6):
    """Compare analytic gradients to central differences at ``coords``.

    ``analytic`` maps parameter names to gradient arrays; ``coords`` is a
    sequence of ``(name, row, col)``.  Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps coordinates whose true
    gradient is zero from dividing by rounding noise.
    """
    coords = list(coords)
    num = np.empty(len(coords))
    ana = np.empty(len(coords))
    params = store.params()
    for j, (name, row, col) in enumerate(coords):
        p = params[name]
        orig = p[row, col]
        p[row, col] = orig + h
        plus = loss_fn(store)
        p[row, col] = orig - h
        minus = loss_fn(store)
        p[row, col] = orig
        num[j] = (plus - minus) / (2 * h)
        ana[j] = analytic[name][row, col]
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
    return FDReport(coords, ana, num, rel, tol, rel <= tol)


def save_checkpoint(store, path, config=None, extra=None):
    """Write parameters, Adam moments and metadata to an ``.npz`` container."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "shape": list(store.shape),
        "d": store.d,
        "k": store.k,
        "seed": store.seed,
        "step": store.step,
        "config": config if config is None or isinstance(config, dict) else asdict(config),
        "extra": extra or {},
    }
    arrays = dict(store.params())
    for name, (m, v) in store.moments.items():
        arrays[f"{name}__m"] = m
        arrays[f"{name}__v"] = v
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    # same layout as np.savez, but with fixed entry timestamps so equal states give equal bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arrays[name]), allow_pickle=False)


def load_checkpoint(path):
    """Return ``(store, meta)`` from a file written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        moments = {n: (z[f"{n}__m"].copy(), z[f"{n}__v"].copy()) for n in PARAM_NAMES}
        store = ParameterStore(z["user_emb"], z["bundle_emb"], z["item_emb"], meta["k"],
                               seed=meta["seed"], step=meta["step"], moments=moments)
    return store, meta
