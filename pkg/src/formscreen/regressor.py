"""Dense capacity regressor on formulation descriptors.

802 -> 1000 -> 500 -> 100 -> 1, ReLU hidden layers, identity output. Trained
one example at a time with Adam under a stepped learning-rate schedule and
validation-RMSE early stopping; the best checkpoint is returned.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, InputError, NumericError, ShapeError
from .formulation import CellRecord, Descriptor, DescriptorBuilder, DescriptorConvention, check_convention

log = logging.getLogger(__name__)

HIDDEN = (1000, 500, 100)


@dataclass
class RegressorModel:
    layers: list[tuple[np.ndarray, np.ndarray]]
    convention: DescriptorConvention

    @classmethod
    def init(cls, input_width: int, convention: DescriptorConvention,
             hidden=HIDDEN, seed: int = 0) -> "RegressorModel":
        rng = np.random.default_rng(seed)
        widths = (input_width,) + tuple(hidden) + (1,)
        layers = [
            (nk.glorot_uniform(rng, a, b), np.zeros((1, b))) for a, b in zip(widths[:-1], widths[1:])
        ]
        return cls(layers, convention)

    @classmethod
    def zeros(cls, input_width: int, convention: DescriptorConvention, hidden=HIDDEN) -> "RegressorModel":
        m = cls.init(input_width, convention, hidden)
        for W, b in m.layers:
            W[...] = 0.0
            b[...] = 0.0
        return m

    @property
    def input_width(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(W.shape[1] for W, _ in self.layers[:-1])

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (W, b) in enumerate(self.layers):
            out[f"{k}.W"] = W
            out[f"{k}.b"] = b
        return out

    def copy(self) -> "RegressorModel":
        return RegressorModel([(W.copy(), b.copy()) for W, b in self.layers], self.convention)

    def forward(self, X: np.ndarray) -> np.ndarray:
        if X.ndim != 2 or X.shape[1] != self.input_width:
            raise ShapeError(f"descriptor width {X.shape[-1]} != model input width {self.input_width}")
        h = X
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h[:, 0]


def predict(model: RegressorModel, d: Descriptor) -> float:
    """Predicted capacity in mAh/g; not clamped."""
    check_convention(model.convention, d.convention)
    return float(model.forward(d.values.reshape(1, -1))[0])


def predict_matrix(model: RegressorModel, X: np.ndarray, convention: DescriptorConvention) -> np.ndarray:
    check_convention(model.convention, convention)
    return model.forward(np.asarray(X, dtype=np.float64))


def regression_loss_fn(model: RegressorModel, X: np.ndarray, y: np.ndarray):
    """``(params, grad) -> loss [, grads]`` for the MSE of ``model`` on (X, y).

    The returned function also carries ``relu_pattern(params)`` for
    kink-aware finite-difference checks.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def forward(params):
        tape = nk.Tape()
        h = tape.const(X)
        n = len(model.layers)
        for k in range(n):
            h = tape.affine(h, tape.param(f"{k}.W", params[f"{k}.W"]), tape.param(f"{k}.b", params[f"{k}.b"]))
            if k < n - 1:
                h = tape.relu(h)
        return tape, float(tape.mse(h, y).value[0, 0])

    def loss(params, grad):
        tape, value = forward(params)
        return (value, nk.backward(tape)) if grad else value

    loss.relu_pattern = lambda params: forward(params)[0].activation_pattern()
    return loss


@dataclass
class TrainConfig:
    seed: int = 0
    initial_lr: float = 1e-4
    phase1_epochs: int = 4000
    phase_epochs: int = 3000
    phase_lrs: tuple[float, ...] = (1e-3, 1e-2)
    max_epochs: int = 15000
    patience: int = 1000
    hidden: tuple[int, ...] = HIDDEN
    report_rmse: float = 20.0

    def __post_init__(self):
        self.phase_lrs = tuple(float(v) for v in self.phase_lrs)
        self.hidden = tuple(int(v) for v in self.hidden)
        if self.initial_lr <= 0 or any(v <= 0 for v in self.phase_lrs):
            raise ConfigError("learning rates must be positive")
        if self.phase1_epochs <= 0 or self.phase_epochs <= 0:
            raise ConfigError("phase lengths must be positive")
        if self.max_epochs <= 0 or self.patience <= 0:
            raise ConfigError("max_epochs and patience must be positive")

    def lr_at(self, epoch: int) -> float:
        if epoch < self.phase1_epochs:
            return self.initial_lr
        if not self.phase_lrs:
            return self.initial_lr
        k = (epoch - self.phase1_epochs) // self.phase_epochs
        return self.phase_lrs[min(k, len(self.phase_lrs) - 1)]


@dataclass
class TrainHistory:
    lr: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    first_below_report: int | None = None

    @property
    def best_val_rmse(self) -> float:
        return self.val_rmse[self.best_epoch]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_mse", "val_rmse"])
            for k, (lr, mse, rmse) in enumerate(zip(self.lr, self.train_mse, self.val_rmse)):
                w.writerow([k, repr(lr), repr(mse), repr(rmse)])


def _as_xy(data, width: int | None = None):
    if len(data) == 0:
        raise InputError("training and validation sets must be non-empty")
    X = np.vstack([np.asarray(d.values if isinstance(d, Descriptor) else d, dtype=np.float64) for d, _ in data])
    y = np.array([float(c) for _, c in data])
    if width is not None and X.shape[1] != width:
        raise ShapeError(f"descriptor width {X.shape[1]} != {width}")
    return X, y


def train(train_set, val_set, config: TrainConfig | None = None,
          convention: DescriptorConvention | None = None):
    """Fit a regressor; returns ``(best model, history)``.

    ``train_set`` and ``val_set`` are sequences of ``(descriptor, capacity)``.
    Each epoch visits the training examples one at a time in a freshly
    shuffled order.
    """
    config = config or TrainConfig()
    if convention is None:
        conv = [d.convention for d, _ in train_set if isinstance(d, Descriptor)]
        convention = conv[0] if conv else DescriptorConvention(gr_version="unversioned")
    X, y = _as_xy(train_set)
    Xv, yv = _as_xy(val_set, X.shape[1])

    model = RegressorModel.init(X.shape[1], convention, config.hidden, config.seed)
    params = model.params()
    state = nk.AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    loss_fn = None
    hist = TrainHistory()
    best = model.copy()
    best_rmse = math.inf

    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        total = 0.0
        for i in rng.permutation(len(y)):
            loss_fn = regression_loss_fn(model, X[i:i + 1], y[i:i + 1])
            loss, grads = loss_fn(params, True)
            if not math.isfinite(loss):
                raise NumericError(
                    f"training diverged in epoch {epoch}; last finite epoch {epoch - 1}"
                )
            nk.adam_step(params, grads, state, lr)
            total += loss
        val_rmse = float(np.sqrt(np.mean((model.forward(Xv) - yv) ** 2)))
        if not math.isfinite(val_rmse):
            raise NumericError(f"training diverged in epoch {epoch}; last finite epoch {epoch - 1}")
        hist.lr.append(lr)
        hist.train_mse.append(total / len(y))
        hist.val_rmse.append(val_rmse)
        if hist.first_below_report is None and val_rmse <= config.report_rmse:
            hist.first_below_report = epoch
            log.info("validation RMSE %.2f first reached %.1f at epoch %d", val_rmse, config.report_rmse, epoch)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best = model.copy()
            hist.best_epoch = epoch
        elif epoch - hist.best_epoch >= config.patience:
            hist.stop_reason = f"early stop: no improvement for {config.patience} epochs"
            break
    else:
        hist.stop_reason = f"reached max_epochs={config.max_epochs}"
    log.info("training stopped (%s); best epoch %d val RMSE %.3f",
             hist.stop_reason, hist.best_epoch, best_rmse)
    return best, hist


@dataclass
class Metrics:
    rmse: float
    mae: float
    parity: list[tuple[str, float, float]]


def regression_metrics(measured, predicted, ids=None) -> Metrics:
    measured = np.asarray(measured, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if measured.size == 0:
        raise InputError("cannot evaluate on an empty set")
    if measured.shape != predicted.shape:
        raise ShapeError(f"measured {measured.shape} vs predicted {predicted.shape}")
    r = predicted - measured
    ids = ids if ids is not None else [str(k) for k in range(measured.size)]
    return Metrics(
        float(np.sqrt(np.mean(r * r))),
        float(np.mean(np.abs(r))),
        [(i, float(m), float(p)) for i, m, p in zip(ids, measured, predicted)],
    )


def evaluate(model: RegressorModel, records: list[CellRecord], builder: DescriptorBuilder) -> Metrics:
    if not records:
        raise InputError("cannot evaluate on an empty set")
    X = builder.matrix([r.design for r in records])
    pred = predict_matrix(model, X, builder.convention)
    return regression_metrics([r.capacity for r in records], pred, [r.record_id for r in records])


def descriptor_pairs(records: list[CellRecord], builder: DescriptorBuilder):
    X = builder.matrix([r.design for r in records])
    return [(Descriptor(x, builder.convention), r.capacity) for x, r in zip(X, records)]
