"""Conventional regressors on the 10 flat features (8 mol%, loading, separator).

``train_rfr`` grows bootstrap CART trees with variance-reduction splits over
a random feature subset. ``train_svr`` solves the epsilon-insensitive SVR
dual with an RBF kernel by exact two-coordinate updates on the most
violating pair.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ProtocolError
from .formulation import CellRecord, flat_features


def flat_xy(records: list[CellRecord]):
    if not records:
        raise InputError("no records")
    X = np.vstack([flat_features(r.design) for r in records])
    y = np.array([r.capacity for r in records])
    return X, y


# random forest


@dataclass
class RfrConfig:
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int = 2
    mtry: int = 3
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1 or self.mtry < 1:
            raise ConfigError("min_leaf and mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")


@dataclass
class TreeNode:
    value: float
    n: int
    sse: float
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _best_split(X, y, features, min_leaf):
    """(feature, threshold, child sse) minimizing the summed child SSE."""
    n = len(y)
    best = (None, 0.0, np.inf)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        k = np.arange(1, n)  # left size
        valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        left_sse = csq[:-1] - csum[:-1] ** 2 / k
        right_sum = csum[-1] - csum[:-1]
        right_sse = (csq[-1] - csq[:-1]) - right_sum ** 2 / (n - k)
        total = np.where(valid, left_sse + right_sse, np.inf)
        j = int(np.argmin(total))
        if total[j] < best[2]:
            best = (f, 0.5 * (xs[j] + xs[j + 1]), float(total[j]))
    return best


def _grow(X, y, depth, cfg: RfrConfig, rng) -> TreeNode:
    mean = float(np.mean(y))
    node = TreeNode(mean, len(y), float(np.sum((y - mean) ** 2)))
    if (cfg.max_depth is not None and depth >= cfg.max_depth) or len(y) < 2 * cfg.min_leaf or node.sse <= 0:
        return node
    m = min(cfg.mtry, X.shape[1])
    features = rng.choice(X.shape[1], size=m, replace=False)
    f, thr, child_sse = _best_split(X, y, features, cfg.min_leaf)
    if f is None or child_sse >= node.sse:
        return node
    mask = X[:, f] <= thr
    node.feature, node.threshold = int(f), float(thr)
    node.left = _grow(X[mask], y[mask], depth + 1, cfg, rng)
    node.right = _grow(X[~mask], y[~mask], depth + 1, cfg, rng)
    return node


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    for i, x in enumerate(X):
        n = node
        while not n.is_leaf:
            n = n.left if x[n.feature] <= n.threshold else n.right
        out[i] = n.value
    return out


@dataclass
class ForestModel:
    trees: list[TreeNode]
    tree_seeds: list[int]
    config: RfrConfig

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.mean([tree_predict(t, X) for t in self.trees], axis=0)


def _fit_tree(X, y, cfg: RfrConfig, seed: int) -> TreeNode:
    rng = np.random.default_rng(seed)
    if cfg.bootstrap:
        idx = rng.integers(0, len(y), size=len(y))
        X, y = X[idx], y[idx]
    return _grow(X, y, 0, cfg, rng)


def train_rfr(X, y, config: RfrConfig | None = None) -> ForestModel:
    """Random forest of CART regression trees; each tree has its own seed."""
    cfg = config or RfrConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise InputError("cannot train a forest on no data")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)]
    return ForestModel([_fit_tree(X, y, cfg, s) for s in seeds], seeds, cfg)


# support vector regression


@dataclass
class SvrConfig:
    C: float = 100.0
    epsilon: float = 5.0
    gamma: float = 0.1
    tol: float = 1e-3
    max_passes: int = 200
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.C <= 0 or self.gamma <= 0:
            raise ConfigError("C and gamma must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvrModel:
    support: np.ndarray
    coef: np.ndarray
    bias: float
    config: SvrConfig
    x_mean: np.ndarray
    x_scale: np.ndarray
    converged: bool = True
    kkt_gap: float = 0.0
    iterations: int = 0

    def _scale(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.x_mean) / self.x_scale

    def predict(self, X) -> np.ndarray:
        Xs = self._scale(X)
        if len(self.coef) == 0:
            return np.full(len(Xs), self.bias)
        return rbf_kernel(Xs, self.support, self.config.gamma) @ self.coef + self.bias


def _pair_step(bi, bj, gi, gj, eta, eps, C):
    """Exact minimizer over t of the pair objective with b_i += t, b_j -= t."""
    lo = max(-C - bi, bj - C)
    hi = min(C - bi, bj + C)
    eta = max(eta, 1e-12)

    def phi(t):
        return 0.5 * eta * t * t + (gi - gj) * t + eps * (abs(bi + t) + abs(bj - t))

    points = sorted({lo, hi} | {p for p in (-bi, bj) if lo < p < hi})
    best_t, best_v = 0.0, phi(0.0)
    for a, b in zip(points[:-1], points[1:]):
        mid = 0.5 * (a + b)
        si = 1.0 if bi + mid > 0 else -1.0
        sj = 1.0 if bj - mid > 0 else -1.0
        t = -((gi - gj) + eps * (si - sj)) / eta
        for cand in (min(max(t, a), b), a, b):
            v = phi(cand)
            if v < best_v - 1e-15:
                best_t, best_v = cand, v
    return best_t


def train_svr(X, y, config: SvrConfig | None = None) -> SvrModel:
    """Epsilon-insensitive RBF SVR.

    Works on beta = alpha - alpha* in [-C, C] with sum(beta) = 0, minimizing
    0.5 b'Kb - y'b + eps |b|_1. Stops when the maximal KKT violation drops
    below ``tol`` or after ``max_passes * n`` pair updates; in the latter case
    the model carries ``converged=False`` and a warning is issued.
    """
    cfg = config or SvrConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n == 0:
        raise InputError("cannot train an SVR on no data")
    if cfg.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xs = (X - mean) / scale
    K = rbf_kernel(Xs, Xs, cfg.gamma)
    beta = np.zeros(n)
    grad = -y.copy()  # K beta - y
    eps, C = cfg.epsilon, cfg.C
    converged = False
    gap = np.inf
    it = 0
    for it in range(cfg.max_passes * n + 1):
        up = grad + np.where(beta >= 0, eps, -eps)
        down = grad + np.where(beta > 0, eps, -eps)
        up_ok = beta < C - 1e-12
        down_ok = beta > -C + 1e-12
        up_m = np.where(up_ok, up, np.inf)
        down_m = np.where(down_ok, down, -np.inf)
        i = int(np.argmin(up_m))
        j = int(np.argmax(down_m))
        gap = float(down_m[j] - up_m[i])
        if gap <= cfg.tol:
            converged = True
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        t = _pair_step(beta[i], beta[j], grad[i], grad[j], eta, eps, C)
        if t == 0.0:
            break  # numerical stall: the violating pair cannot improve
        beta[i] += t
        beta[j] -= t
        grad += t * (K[:, i] - K[:, j])
    up = grad + np.where(beta >= 0, eps, -eps)
    down = grad + np.where(beta > 0, eps, -eps)
    up_min = np.min(np.where(beta < C - 1e-12, up, np.inf))
    down_max = np.max(np.where(beta > -C + 1e-12, down, -np.inf))
    gap = float(down_max - up_min)
    bias = -0.5 * (up_min + down_max)
    if not converged:
        warnings.warn(f"SVR did not reach KKT tolerance {cfg.tol} (gap {gap:.3g})", RuntimeWarning)
    sv = np.abs(beta) > 0
    return SvrModel(Xs[sv], beta[sv], float(bias), cfg, mean, scale, converged, gap, it)


# comparison


@dataclass
class ComparisonRow:
    model: str
    mae: float
    hyperparameters: dict = field(default_factory=dict)


def compare(predictions: dict[str, np.ndarray], measured, train_ids: dict[str, tuple] | None = None):
    """MAE per model on one test set, ascending.

    ``train_ids`` maps model name to the ids of its training split; differing
    splits are a protocol error.
    """
    measured = np.asarray(measured, dtype=np.float64)
    if train_ids:
        splits = {tuple(sorted(v)) for v in train_ids.values()}
        if len(splits) > 1:
            raise ProtocolError("models were trained on different splits: " + ", ".join(train_ids))
    rows = []
    for name, pred in predictions.items():
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != measured.shape:
            raise InputError(f"{name}: {pred.shape} predictions for {measured.shape} labels")
        rows.append(ComparisonRow(name, float(np.mean(np.abs(pred - measured)))))
    return sorted(rows, key=lambda r: (r.mae, r.model))


def write_comparison(path, rows: list[ComparisonRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mae_mah_g", "hyperparameters"])
        for r in rows:
            w.writerow([r.model, repr(r.mae), json.dumps(r.hyperparameters, sort_keys=True)])


def config_dict(cfg) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
