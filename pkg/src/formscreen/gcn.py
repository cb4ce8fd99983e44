"""Graph-convolution encoder producing 100-dim graph representations (GRs).

Two propagation layers ``H' = ReLU(Ã H W)`` and a mean-pool readout give the
GR. A small dense head (100 -> 32 -> 3) is attached only while pretraining
against standardized (HOMO, LUMO, dipole) labels; afterwards the model is
frozen and the head is ignored.
"""
from __future__ import annotations

import csv
import hashlib
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .chem import N_FEATURES, Constituent, FeaturizedGraph, MolecularGraph, featurize, parse_smiles
from .errors import DatasetError, InputError, ShapeError, SmilesError, StateError

GR_SIZE = 100
LABEL_NAMES = ("homo_ev", "lumo_ev", "dipole_debye")

_CONV = ("conv1", "conv2")
_HEAD = ("head1.W", "head1.b", "head2.W", "head2.b")


@dataclass
class GcnModel:
    weights: dict[str, np.ndarray]
    label_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    label_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    frozen: bool = False

    @classmethod
    def init(cls, seed: int = 0, n_features: int = N_FEATURES, hidden: int = 64,
             width: int = GR_SIZE, head_hidden: int = 32) -> "GcnModel":
        rng = np.random.default_rng(seed)
        w = {
            "conv1": nk.glorot_uniform(rng, n_features, hidden),
            "conv2": nk.glorot_uniform(rng, hidden, width),
            "head1.W": nk.glorot_uniform(rng, width, head_hidden),
            "head1.b": np.zeros((1, head_hidden)),
            "head2.W": nk.glorot_uniform(rng, head_hidden, 3),
            "head2.b": np.zeros((1, 3)),
        }
        return cls(w)

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES, hidden: int = 64, width: int = GR_SIZE) -> "GcnModel":
        m = cls.init(0, n_features, hidden, width)
        for a in m.weights.values():
            a[...] = 0.0
        return m

    @property
    def n_features(self) -> int:
        return self.weights["conv1"].shape[0]

    @property
    def version(self) -> str:
        h = hashlib.sha256()
        for name in _CONV:
            a = np.ascontiguousarray(self.weights[name], dtype="<f8")
            h.update(name.encode())
            h.update(np.array(a.shape, dtype="<i8").tobytes())
            h.update(a.tobytes())
        return h.hexdigest()[:16]

    def freeze(self) -> "GcnModel":
        for a in self.weights.values():
            a.flags.writeable = False
        self.label_mean.flags.writeable = False
        self.label_std.flags.writeable = False
        self.frozen = True
        return self


def gcn_forward(fg: FeaturizedGraph, model: GcnModel) -> np.ndarray:
    """GR of one featurized graph: two ReLU propagations then a column mean."""
    if fg.nodes.shape[1] != model.n_features:
        raise ShapeError(
            f"node features have width {fg.nodes.shape[1]}, encoder expects {model.n_features}"
        )
    h = fg.nodes
    for name in _CONV:
        h = np.maximum(fg.adjacency @ (h @ model.weights[name]), 0.0)
    return h.mean(axis=0)


def _batch(graphs: list[FeaturizedGraph]):
    """Block-diagonal adjacency, stacked node features and a mean-pool matrix."""
    adj = sp.block_diag([g.adjacency for g in graphs], format="csr")
    nodes = np.vstack([g.nodes for g in graphs])
    sizes = np.array([g.n_atoms for g in graphs])
    rows = np.repeat(np.arange(len(graphs)), sizes)
    pool = sp.csr_matrix(
        (1.0 / sizes[rows], (rows, np.arange(len(rows)))), shape=(len(graphs), len(rows))
    )
    return adj, nodes, pool


def _pretrain_tape(weights, adj, nodes, pool, targets):
    tape = nk.Tape()
    p = {k: tape.param(k, v) for k, v in weights.items()}
    h = tape.const(nodes)
    for name in _CONV:
        h = tape.relu(tape.propagate(adj, tape.matmul(h, p[name])))
    gr = tape.propagate(pool, h)
    z = tape.relu(tape.affine(gr, p["head1.W"], p["head1.b"]))
    out = tape.affine(z, p["head2.W"], p["head2.b"])
    return tape, float(tape.mse(out, targets).value[0, 0])


def _pretrain_loss(weights, adj, nodes, pool, targets, grad: bool):
    tape, loss = _pretrain_tape(weights, adj, nodes, pool, targets)
    if not grad:
        return loss
    return loss, nk.backward(tape)


def pretrain_loss_fn(model: GcnModel, graphs: list[MolecularGraph], labels: np.ndarray):
    """``(weights, grad) -> loss [, grads]`` closure over a fixed corpus, for fd checks.

    Also carries ``relu_pattern(weights)``.
    """
    adj, nodes, pool = _batch([featurize(g) for g in graphs])
    targets = (np.asarray(labels, dtype=np.float64) - model.label_mean) / model.label_std

    def loss(weights, grad):
        return _pretrain_loss(weights, adj, nodes, pool, targets, grad)

    loss.relu_pattern = lambda weights: _pretrain_tape(weights, adj, nodes, pool, targets)[0].activation_pattern()
    return loss


@dataclass
class PretrainConfig:
    seed: int = 0
    lr: float = 1e-3
    max_epochs: int = 2000
    patience: int = 200
    hidden: int = 64
    head_hidden: int = 32


def _check_corpus(corpus) -> np.ndarray:
    if len(corpus) == 0:
        raise InputError("pretraining corpus is empty")
    labels = []
    for k, (_, lab) in enumerate(corpus):
        lab = np.asarray(lab, dtype=np.float64).reshape(-1)
        if lab.size != 3:
            raise InputError(f"corpus entry {k}: expected 3 labels {LABEL_NAMES}, got {lab.size}")
        if not np.isfinite(lab).all():
            raise InputError(f"corpus entry {k}: non-finite label {lab.tolist()}")
        labels.append(lab)
    return np.array(labels)


def pretrain(corpus: list[tuple[MolecularGraph, np.ndarray]], config: PretrainConfig | None = None):
    """Fit the encoder on standardized labels; returns ``(frozen model, history)``.

    ``history`` is a list of ``(epoch, mse)`` pairs on the standardized scale.
    The weights with the lowest training loss are kept.
    """
    config = config or PretrainConfig()
    labels = _check_corpus(corpus)
    mean = labels.mean(axis=0)
    std = labels.std(axis=0)
    std[std == 0] = 1.0
    model = GcnModel.init(config.seed, hidden=config.hidden, head_hidden=config.head_hidden)
    model.label_mean, model.label_std = mean, std
    adj, nodes, pool = _batch([featurize(g) for g, _ in corpus])
    targets = (labels - mean) / std

    state = nk.AdamState.for_params(model.weights)
    history: list[tuple[int, float]] = []
    best = (math.inf, -1, None)
    for epoch in range(config.max_epochs):
        loss, grads = _pretrain_loss(model.weights, adj, nodes, pool, targets, True)
        history.append((epoch, loss))
        if loss < best[0]:
            best = (loss, epoch, {k: v.copy() for k, v in model.weights.items()})
        elif epoch - best[1] >= config.patience:
            break
        nk.adam_step(model.weights, grads, state, config.lr)
    model.weights = best[2]
    return model.freeze(), history


_cache: dict[tuple[str, str, str], np.ndarray] = {}
_cache_lock = threading.Lock()


def encode_constituent(c: Constituent, model: GcnModel) -> np.ndarray:
    """GR of a registry constituent, memoized per (constituent, encoder version)."""
    if not model.frozen:
        raise StateError("encoder must be frozen before it is used for encoding")
    key = (c.name, c.smiles, model.version)
    with _cache_lock:
        hit = _cache.get(key)
    if hit is None:
        hit = gcn_forward(featurize(c.graph), model)
        hit.flags.writeable = False
        with _cache_lock:
            hit = _cache.setdefault(key, hit)
    return hit


def encode_registry(model: GcnModel, constituents: list[Constituent] | None = None) -> np.ndarray:
    """``(8, 100)`` matrix of GRs in registry order."""
    from .chem import canonical_constituents

    cs = constituents or canonical_constituents()
    return np.vstack([encode_constituent(c, model) for c in cs])


CORPUS_COLUMNS = ("smiles",) + LABEL_NAMES


def load_corpus(path) -> list[tuple[MolecularGraph, np.ndarray]]:
    """Read a pretraining corpus CSV (smiles, homo_ev, lumo_ev, dipole_debye)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"corpus file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CORPUS_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                graph = parse_smiles(row["smiles"])
            except SmilesError as exc:
                raise DatasetError(f"{path} row {row_no}: {exc}") from exc
            try:
                labels = np.array([float(row[c]) for c in LABEL_NAMES])
            except ValueError as exc:
                raise DatasetError(f"{path} row {row_no}: non-numeric label ({exc})") from exc
            if not np.isfinite(labels).all():
                raise DatasetError(f"{path} row {row_no}: non-finite label")
            out.append((graph, labels))
    if not out:
        raise DatasetError(f"{path}: corpus has no rows")
    return out


def write_corpus(path, rows: list[tuple[str, np.ndarray]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORPUS_COLUMNS)
        for smiles, lab in rows:
            w.writerow([smiles] + [repr(float(v)) for v in lab])
