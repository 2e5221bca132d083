"""Tape-based reverse-mode differentiation over dense float64 arrays.

Only the handful of primitives needed for small MLPs and CNNs are provided:
dense matmul, bias add, 3x3 convolution (stride 1, zero padding), ReLU,
2x2 max-pool, flatten, batch normalization and a fused softmax
cross-entropy.  A few elementwise helpers (add, sub, mul, scale, sum) exist
so that toy objectives can be differentiated in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .models import (
    BatchNorm,
    Conv3x3,
    Dense,
    Flatten,
    MaxPool2,
    ModelGraph,
    ParameterStore,
    ReLU,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
FD_MAX_PARAMS = 10_000


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when an activation, loss or gradient stops being finite."""

    def __init__(self, message: str, where: Optional[str] = None):
        super().__init__(message)
        self.where = where


class RevisionError(RuntimeError):
    pass


class Var:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape


@dataclass
class _Record:
    parents: tuple
    vjp: Optional[Callable]


class Tape:
    """Ordered record of primitive applications.

    Records are appended as operations run, so every record's operands
    precede it and a single reverse sweep suffices.
    """

    def __init__(self, revision: Optional[int] = None):
        self.records: list[_Record] = []
        self.leaves: list[int] = []
        self.revision = revision
        self.store: Optional[ParameterStore] = None
        self.param_leaves: list[tuple[Var, int]] = []

    def leaf(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        var = self._push(value, (), None)
        self.leaves.append(var.index)
        return var

    def _push(self, value, parents, vjp) -> Var:
        self.records.append(_Record(tuple(p.index for p in parents), vjp))
        return Var(self, len(self.records) - 1, value)

    def gradients(self, output: Var, seed=None) -> dict[int, np.ndarray]:
        """Reverse sweep from `output`; returns {leaf index: gradient}."""
        grads: list = [None] * len(self.records)
        grads[output.index] = (
            np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=np.float64)
        )
        for i in range(output.index, -1, -1):
            g = grads[i]
            rec = self.records[i]
            if g is None or rec.vjp is None:
                continue
            for parent, pg in zip(rec.parents, rec.vjp(g)):
                if pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg
        return {
            i: (grads[i] if grads[i] is not None else np.zeros(()))
            for i in self.leaves
        }

    def grad(self, output: Var, *wrt: Var) -> list[np.ndarray]:
        g = self.gradients(output)
        return [np.broadcast_to(g[v.index], v.shape).copy() for v in wrt]


def _const(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape._push(np.asarray(x, dtype=np.float64), (), None)


# --- elementwise helpers -------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Var, b) -> Var:
    b = _const(a.tape, b)
    sa, sb = a.shape, b.shape
    return a.tape._push(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Var, b) -> Var:
    b = _const(a.tape, b)
    sa, sb = a.shape, b.shape
    return a.tape._push(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Var, b) -> Var:
    b = _const(a.tape, b)
    av, bv = a.value, b.value
    return a.tape._push(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a: Var, c: float) -> Var:
    return a.tape._push(a.value * c, (a,), lambda g: (g * c,))


def total(a: Var) -> Var:
    shape = a.shape
    return a.tape._push(
        np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


# --- network primitives --------------------------------------------------


def matmul(x: Var, w: Var) -> Var:
    xv, wv = x.value, w.value
    return x.tape._push(xv @ wv, (x, w), lambda g: (g @ wv.T, xv.T @ g))


def add_bias(x: Var, b: Var) -> Var:
    """Add a per-feature bias; for 4-D inputs the feature axis is 1."""
    if x.value.ndim == 4:
        out = x.value + b.value[None, :, None, None]
        vjp = lambda g: (g, g.sum(axis=(0, 2, 3)))
    else:
        out = x.value + b.value
        vjp = lambda g: (g, g.sum(axis=0))
    return x.tape._push(out, (x, b), vjp)


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.tape._push(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def conv3x3(x: Var, w: Var) -> Var:
    """Same-size 3x3 convolution, stride 1, zero padding 1.  x: (N, C, H, W)."""
    xv, wv = x.value, w.value
    n, c, h, wd = xv.shape
    o = wv.shape[0]
    xp = np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    wmat = wv.reshape(o, c * 9)
    out = (cols @ wmat.T).reshape(n, h, wd, o).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ cols).reshape(wv.shape)
        dcols = (g2 @ wmat).reshape(n, h, wd, c, 3, 3)
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1], dw

    return x.tape._push(np.ascontiguousarray(out), (x, w), vjp)


def maxpool2(x: Var) -> Var:
    xv = x.value
    n, c, h, w = xv.shape
    h2, w2 = h // 2, w // 2
    blocks = xv.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, arg, axis=-1)[..., 0]

    def vjp(g):
        d = np.zeros_like(blocks)
        np.put_along_axis(d, arg, g[..., None], axis=-1)
        d = d.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (d,)

    return x.tape._push(out, (x,), vjp)


def flatten(x: Var) -> Var:
    shape = x.shape
    return x.tape._push(
        x.value.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),)
    )


def batchnorm(
    x: Var,
    gamma: Var,
    beta: Var,
    running: Optional[dict] = None,
    training: bool = True,
    update_stats: bool = True,
) -> Var:
    """Batch normalization over the batch axis (and spatial axes for 4-D input).

    In training mode the batch statistics are used and, when `update_stats`
    is set, `running['mean']`/`running['var']` are moved towards them.
    """
    xv = x.value
    spatial = xv.ndim == 4
    axes = (0, 2, 3) if spatial else (0,)
    bshape = (1, -1, 1, 1) if spatial else (1, -1)
    count = xv.size // xv.shape[1]
    if training:
        mean = xv.mean(axis=axes)
        var = xv.var(axis=axes)
        if running is not None and update_stats:
            unbiased = var * count / max(count - 1, 1)
            running["mean"] *= 1 - BN_MOMENTUM
            running["mean"] += BN_MOMENTUM * mean
            running["var"] *= 1 - BN_MOMENTUM
            running["var"] += BN_MOMENTUM * unbiased
    else:
        mean, var = running["mean"], running["var"]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (xv - mean.reshape(bshape)) * inv.reshape(bshape)
    gv = gamma.value
    out = gv.reshape(bshape) * xhat + beta.value.reshape(bshape)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gv.reshape(bshape)
        if training:
            dx = (
                inv.reshape(bshape)
                / count
                * (
                    count * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            )
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return x.tape._push(out, (x, gamma, beta), vjp)


def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> tuple[Var, np.ndarray]:
    """Mean cross-entropy over the batch and the per-sample losses."""
    z = logits.value
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    lse = (np.log(sez) + zmax)[:, 0]
    rows = np.arange(n)
    per_sample = lse - z[rows, labels]
    probs = ez / sez

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return logits.tape._push(np.asarray(per_sample.mean()), (logits,), vjp), per_sample


# --- model-level forward / backward -------------------------------------


@dataclass
class LossValue:
    scalar: float
    per_sample: np.ndarray
    logits: np.ndarray = field(repr=False, default=None)
    var: Optional[Var] = field(repr=False, default=None)


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite activation at {where}", where)


def forward(
    model: ModelGraph,
    store: ParameterStore,
    inputs,
    labels,
    training: bool = True,
    update_stats: Optional[bool] = None,
) -> tuple[LossValue, Tape]:
    """Run the model on a batch and record a tape for `backward`."""
    x = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim == 0 or labels.ndim != 1 or x.shape[0] != labels.shape[0] or x.shape[0] < 1:
        raise ShapeError(
            f"inputs {x.shape} and labels {labels.shape} need equal leading extent >= 1"
        )
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(f"input sample shape {x.shape[1:]} != model input {model.input_shape}")
    if store.data.shape != (model.num_params,):
        raise ShapeError(f"parameter store has {store.data.size} values, model needs {model.num_params}")
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise ShapeError("labels out of range for the model's class count")
    if update_stats is None:
        update_stats = training

    tape = Tape(store.revision)
    tape.store = store
    h = tape.leaf(x)

    def param(p):
        v = tape.leaf(store.view(p))
        tape.param_leaves.append((v, p.offset))
        return v

    for pos, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            h = add_bias(matmul(h, param(layer.weight)), param(layer.bias))
        elif isinstance(layer, Conv3x3):
            h = add_bias(conv3x3(h, param(layer.weight)), param(layer.bias))
        elif isinstance(layer, BatchNorm):
            h = batchnorm(
                h,
                param(layer.scale),
                param(layer.shift),
                store.buffers[layer.name],
                training=training,
                update_stats=update_stats,
            )
        elif isinstance(layer, ReLU):
            h = relu(h)
        elif isinstance(layer, MaxPool2):
            h = maxpool2(h)
        elif isinstance(layer, Flatten):
            h = flatten(h)
        else:  # pragma: no cover
            raise TypeError(f"unknown layer {layer!r}")
        _check_finite(h.value, f"layer {pos} ({layer.name})")

    loss_var, per_sample = softmax_cross_entropy(h, labels)
    _check_finite(per_sample, "loss")
    loss = LossValue(float(loss_var.value), per_sample, h.value, loss_var)
    return loss, tape


def backward(tape: Tape, loss: LossValue, seed: float = 1.0) -> np.ndarray:
    """Flat gradient of `seed * loss.scalar` w.r.t. every model parameter."""
    store = tape.store
    if store is None or store.revision != tape.revision:
        raise RevisionError("tape was recorded against a different parameter revision")
    leaf_grads = tape.gradients(loss.var, seed=np.float64(seed))
    flat = np.zeros_like(store.data)
    for var, offset in tape.param_leaves:
        g = leaf_grads[var.index]
        flat[offset : offset + var.value.size] += g.reshape(-1)
    return flat


def loss_and_grad(model, store, inputs, labels, training=True, update_stats=None):
    loss, tape = forward(model, store, inputs, labels, training, update_stats)
    return loss, backward(tape, loss)


# --- finite differences -------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    worst_index: int
    num_params: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_differences(fn: Callable[[np.ndarray], float], w: np.ndarray, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    w = np.array(w, dtype=np.float64)
    out = np.empty_like(w)
    for j in range(w.size):
        orig = w[j]
        w[j] = orig + step
        fp = fn(w)
        w[j] = orig - step
        fm = fn(w)
        w[j] = orig
        out[j] = (fp - fm) / (2 * step)
    return out


def finite_difference_check(
    model: ModelGraph,
    store: ParameterStore,
    inputs,
    labels,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare `backward` against central differences coordinate by coordinate.

    Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
    coordinates whose true gradient is ~0 from dominating the report.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if model.num_params > FD_MAX_PARAMS:
        raise ValueError(f"finite-difference budget exceeded: {model.num_params} > {FD_MAX_PARAMS}")
    _, analytic = loss_and_grad(model, store, inputs, labels, update_stats=False)
    probe = store.copy()

    def f(w):
        probe.data[:] = w
        probe.revision += 1
        loss, _ = forward(model, probe, inputs, labels, update_stats=False)
        return loss.scalar

    numeric = central_differences(f, store.data, step)
    rel = relative_error(analytic, numeric, floor)
    return GradCheckReport(
        float(rel.max()), float(rel.mean()), int(rel.argmax()), model.num_params, analytic, numeric
    )


def check_function(fn_tape: Callable[[Var], Var], w0: Sequence[float], step: float = 1e-5, floor: float = 1e-6):
    """Gradient check for a scalar function written with tape primitives."""
    if not step > 0:
        raise ValueError("step must be positive")
    w0 = np.asarray(w0, dtype=np.float64)

    def value(w):
        t = Tape()
        return float(fn_tape(t.leaf(w)).value)

    t = Tape()
    w = t.leaf(w0.copy())
    (analytic,) = t.grad(fn_tape(w), w)
    numeric = central_differences(value, w0, step)
    rel = relative_error(analytic, numeric, floor)
    return GradCheckReport(float(rel.max()), float(rel.mean()), int(rel.argmax()), w0.size, analytic, numeric)
