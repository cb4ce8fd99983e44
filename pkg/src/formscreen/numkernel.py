"""Dense linear algebra, a small reverse-mode tape and Adam.

Everything is float64. Matrices are plain 2-D numpy arrays; a row vector is
``(1, n)``. The tape only knows the primitives the encoder and the regressor
need: affine maps, right-multiplication by a weight, left-multiplication by
a constant (graph propagation and pooling), ReLU, column concatenation,
constant scaling and a mean-squared-error loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .errors import NumericError, ShapeError, StateError

Array = np.ndarray


def as_matrix(x, name: str = "x") -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def affine_forward(x: Array, W: Array, b: Array) -> Array:
    """``x @ W + b`` with ``b`` broadcast over rows."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: x {x.shape} incompatible with W {W.shape}")
    if b.shape != (1, W.shape[1]):
        raise ShapeError(f"affine: b {b.shape} incompatible with W {W.shape}")
    return x @ W + b


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _outer_or_matmul(x: Array, g: Array) -> Array:
    # x.T @ g; a single row makes it an outer product, which numpy does faster
    if x.shape[0] == 1:
        return np.multiply(x.reshape(-1, 1), g)
    return x.T @ g


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value: Array, requires_grad: bool, name: str | None = None):
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records one forward pass; :func:`backward` replays it in reverse."""

    def __init__(self):
        self._ops: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self._params: dict[str, Var] = {}
        self._loss: Var | None = None
        self.relu_masks: list[Array] = []

    # leaves

    def param(self, name: str, value: Array) -> Var:
        if name in self._params:
            raise StateError(f"parameter {name!r} registered twice on one tape")
        v = Var(value, True, name)
        self._params[name] = v
        return v

    def const(self, value) -> Var:
        return Var(as_matrix(value), False)

    @property
    def loss(self) -> Var | None:
        return self._loss

    def activation_pattern(self) -> bytes:
        """Packed on/off state of every ReLU evaluated on this tape."""
        if not self.relu_masks:
            return b""
        return np.packbits(np.concatenate([m.ravel() for m in self.relu_masks])).tobytes()

    # primitives

    def _record(self, value: Array, inputs: tuple[Var, ...], vjp: Callable) -> Var:
        out = Var(value, any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._ops.append((out, inputs, vjp))
        return out

    def affine(self, x: Var, W: Var, b: Var) -> Var:
        xv, Wv = x.value, W.value
        out = affine_forward(xv, Wv, b.value)

        def vjp(g):
            return (
                g @ Wv.T if x.requires_grad else None,
                _outer_or_matmul(xv, g) if W.requires_grad else None,
                g.sum(axis=0, keepdims=True) if b.requires_grad else None,
            )

        return self._record(out, (x, W, b), vjp)

    def matmul(self, x: Var, W: Var) -> Var:
        xv, Wv = x.value, W.value
        if xv.shape[1] != Wv.shape[0]:
            raise ShapeError(f"matmul: x {xv.shape} incompatible with W {Wv.shape}")

        def vjp(g):
            return (
                g @ Wv.T if x.requires_grad else None,
                _outer_or_matmul(xv, g) if W.requires_grad else None,
            )

        return self._record(xv @ Wv, (x, W), vjp)

    def propagate(self, A, h: Var) -> Var:
        """Left-multiply by a constant matrix (dense or scipy-sparse)."""
        if A.shape[1] != h.value.shape[0]:
            raise ShapeError(f"propagate: A {A.shape} incompatible with h {h.value.shape}")
        out = np.asarray(A @ h.value)

        def vjp(g):
            return (np.asarray(A.T @ g),)

        return self._record(out, (h,), vjp)

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        self.relu_masks.append(mask)
        return self._record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))

    def concat(self, xs: list[Var]) -> Var:
        rows = {v.value.shape[0] for v in xs}
        if len(rows) != 1:
            raise ShapeError(f"concat: row counts differ {sorted(rows)}")
        widths = np.cumsum([0] + [v.value.shape[1] for v in xs])
        out = np.concatenate([v.value for v in xs], axis=1)

        def vjp(g):
            return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(xs)))

        return self._record(out, tuple(xs), vjp)

    def scale(self, x: Var, c) -> Var:
        c = np.asarray(c, dtype=np.float64)
        try:
            out = x.value * c
        except ValueError as exc:
            raise ShapeError(f"scale: x {x.value.shape} vs factor {c.shape}") from exc
        if out.shape != x.value.shape:
            raise ShapeError(f"scale: x {x.value.shape} vs factor {c.shape}")
        return self._record(out, (x,), lambda g: (g * c,))

    def mse(self, pred: Var, target) -> Var:
        t = as_matrix(target, "target")
        if t.shape != pred.value.shape:
            raise ShapeError(f"mse: prediction {pred.value.shape} vs target {t.shape}")
        diff = pred.value - t
        n = diff.size
        out = Var(np.array([[np.mean(diff * diff)]]), pred.requires_grad)
        if out.requires_grad:
            self._ops.append((out, (pred,), lambda g: (g * (2.0 / n) * diff,)))
        self._loss = out
        return out


def backward(tape: Tape, loss_seed: float = 1.0) -> dict[str, Array]:
    """Gradient of the recorded loss for every parameter on ``tape``.

    Parameters not on the path to the loss get zero gradients. The tape is
    cleared afterwards.
    """
    if tape._loss is None:
        raise StateError("backward called before a forward pass recorded a loss")
    grads: dict[int, Array] = {id(tape._loss): np.array([[float(loss_seed)]])}
    for out, inputs, vjp in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for name, v in tape._params.items():
        g = grads.get(id(v))
        result[name] = np.zeros_like(v.value) if g is None else g
    tape._ops.clear()
    tape._loss = None
    return result


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, b1, b2, eps, step_size, v_scale):
    for k in range(p.size):
        gk = g[k]
        mk = b1 * m[k] + (1.0 - b1) * gk
        vk = b2 * v[k] + (1.0 - b2) * gk * gk
        m[k] = mk
        v[k] = vk
        p[k] -= step_size * mk / (np.sqrt(vk * v_scale) + eps)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Array], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params: dict[str, Array], grads: dict[str, Array], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"adam: block {name!r} param {p.shape} grad {g.shape}")
        if not np.isfinite(np.sum(g)) and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    step_size = lr / (1.0 - state.beta1 ** t)
    v_scale = 1.0 / (1.0 - state.beta2 ** t)
    for name, p in params.items():
        _adam_kernel(
            p.reshape(-1), np.ascontiguousarray(grads[name]).reshape(-1),
            state.m[name].reshape(-1), state.v[name].reshape(-1),
            state.beta1, state.beta2, state.eps, step_size, v_scale,
        )
    return params, state


@dataclass
class FdReport:
    max_error: float
    probed: int
    kinks: int


def fd_report(
    model_loss: Callable,
    params: dict[str, Array],
    eps: float = 1e-4,
    coords_per_block: int | None = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> FdReport:
    """Compare analytic gradients with central differences.

    ``model_loss(params, grad)`` returns ``(loss, grads)`` when ``grad`` is
    true and the bare loss otherwise. With ``coords_per_block`` set, only that
    many randomly chosen coordinates of each block are probed.

    A central difference does not estimate the derivative when the step
    crosses a ReLU kink. With ``skip_kinks``, ``model_loss.relu_pattern(params)``
    must return the activation pattern; coordinates where the pattern at
    ``+eps`` or ``-eps`` differs from the unperturbed one are counted in
    ``kinks`` and left out of ``max_error``.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    pattern = getattr(model_loss, "relu_pattern", None)
    if skip_kinks and pattern is None:
        raise ValueError("skip_kinks needs model_loss.relu_pattern")
    _, analytic = model_loss(params, True)
    base_pattern = pattern(params) if skip_kinks else b""
    rng = np.random.default_rng(seed)
    worst, probed, kinks = 0.0, 0, 0
    for name, p in params.items():
        flat = p.reshape(-1)
        if coords_per_block is None or coords_per_block >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=coords_per_block, replace=False)
        ga = analytic[name].reshape(-1)
        for k in idx:
            orig = flat[k]
            crossed = False
            flat[k] = orig + eps
            up = model_loss(params, False)
            crossed = skip_kinks and pattern(params) != base_pattern
            flat[k] = orig - eps
            down = model_loss(params, False)
            crossed = crossed or (skip_kinks and pattern(params) != base_pattern)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss perturbing {name}[{k}]")
            probed += 1
            if crossed:
                kinks += 1
                continue
            cd = (up - down) / (2 * eps)
            denom = max(abs(ga[k]), abs(cd), 1e-12)
            worst = max(worst, abs(ga[k] - cd) / denom)
    return FdReport(worst, probed, kinks)


def fd_check(
    model_loss: Callable,
    params: dict[str, Array],
    eps: float = 1e-4,
    coords_per_block: int | None = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return fd_report(model_loss, params, eps, coords_per_block, seed, skip_kinks).max_error
