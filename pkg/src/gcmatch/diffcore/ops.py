"""Differentiable primitives and the composites built from them.

Every function here either records exactly one entry on the tape (primitive)
or is a plain composition of primitives (composite).  Constants may be passed
as numpy arrays / scalars; they are captured in the closure and receive no
gradient.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError, InputError
from .tape import Tape, Var, check_matmul_shapes


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape* (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*operands) -> Tape:
    for x in operands:
        if isinstance(x, Var):
            return x.tape
    raise InputError("at least one operand must be a tape Var")


# ---------------------------------------------------------------------------
# elementwise binary
# ---------------------------------------------------------------------------


def _binary(a, b, forward, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    av, bv = _values(a), _values(b)
    out = forward(av, bv)
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape))
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape))

    def vjp(g):
        return [fn(g) for fn in grads]

    return tape.record(out, parents, vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


# ---------------------------------------------------------------------------
# elementwise unary
# ---------------------------------------------------------------------------


def _unary(x: Var, forward, vjp_fn):
    xv = _values(x)
    out = forward(xv)
    return x.tape.record(out, [x], lambda g: [vjp_fn(g, xv, out)])


def neg(x: Var):
    return _unary(x, lambda v: -v, lambda g, v, o: -g)


def exp(x: Var):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x: Var):
    return _unary(x, np.log, lambda g, v, o: g / v)


def sqrt(x: Var):
    # Subgradient 0 at exactly zero keeps gradients finite for zero distances.
    def vjp(g, v, o):
        denom = np.where(o > 0.0, 2.0 * o, 1.0)
        return np.where(o > 0.0, g / denom, 0.0)

    return _unary(x, np.sqrt, vjp)


def sigmoid(x: Var):
    def forward(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary(x, forward, lambda g, v, o: g * o * (1.0 - o))


def leaky_relu(x: Var, slope: float = 0.01):
    """max(x, slope*x); the derivative at exactly 0 is 1 (positive side)."""
    if slope < 0:
        raise ConfigError(f"leaky_relu slope must be >= 0, got {slope}")

    def vjp(g, v, o):
        return g * np.where(v >= 0.0, 1.0, slope)

    return _unary(x, lambda v: np.where(v >= 0.0, v, slope * v), vjp)


def elu(x: Var):
    def vjp(g, v, o):
        return g * np.where(v >= 0.0, 1.0, o + 1.0)

    return _unary(x, lambda v: np.where(v >= 0.0, v, np.expm1(v)), vjp)


def clip(x: Var, lo: float, hi: float):
    """Clamp values; gradient passes only where unclipped."""

    def vjp(g, v, o):
        return g * ((v >= lo) & (v <= hi))

    return _unary(x, lambda v: np.clip(v, lo, hi), vjp)


# ---------------------------------------------------------------------------
# matrix / shape
# ---------------------------------------------------------------------------


def matmul(a, b):
    av, bv = _values(a), _values(b)
    check_matmul_shapes(av.shape, bv.shape)
    tape = _tape_of(a, b)
    out = av @ bv
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: g @ bv.T)
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: av.T @ g)

    def vjp(g):
        return [fn(g) for fn in grads]

    return tape.record(out, parents, vjp)


def transpose(x: Var):
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return x.tape.record(x.values.T.copy(), [x], lambda g: [g.T])


def reshape(x: Var, shape):
    old = x.values.shape
    return x.tape.record(x.values.reshape(shape), [x], lambda g: [g.reshape(old)])


def concat(xs, axis: int = 0):
    xs = list(xs)
    tape = _tape_of(*xs)
    vals = [_values(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents, slots = [], []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append(x)
            slots.append(i)

    def vjp(g):
        pieces = []
        for i in slots:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return pieces

    return tape.record(out, parents, vjp)


def gather_rows(x: Var, idx):
    """out[i] = x[idx[i]] along axis 0; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.values[idx]
    shape = x.values.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=np.float64)
        np.add.at(gx, idx, g)
        return [gx]

    return x.tape.record(out, [x], vjp)


def gather_elements(x: Var, rows, cols):
    """out[i] = x[rows[i], cols[i]] for a matrix x; backward scatter-adds."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2:
        raise DimensionError(f"gather_elements expects a matrix, got shape {x.shape}")
    out = x.values[rows, cols]
    shape = x.values.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=np.float64)
        np.add.at(gx, (rows, cols), g)
        return [gx]

    return x.tape.record(out, [x], vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_(x: Var, axis=None, keepdims: bool = False):
    xv = x.values
    out = xv.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, xv.shape).copy()]

    return x.tape.record(out, [x], vjp)


def mean(x: Var, axis=None, keepdims: bool = False):
    xv = x.values
    out = xv.mean(axis=axis, keepdims=keepdims)
    count = xv.size if axis is None else xv.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, xv.shape) / count]

    return x.tape.record(out, [x], vjp)


def max_(x: Var, axis: int, keepdims: bool = False):
    """Max over one axis; the gradient flows to the first maximal entry."""
    xv = x.values
    out = xv.max(axis=axis, keepdims=keepdims)
    arg = np.argmax(xv, axis=axis)
    onehot = np.zeros_like(xv)
    np.put_along_axis(onehot, np.expand_dims(arg, axis), 1.0, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [onehot * g]

    return x.tape.record(out, [x], vjp)


def logsumexp(x: Var, axis: int, keepdims: bool = False):
    xv = x.values
    hi = np.max(xv, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    ex = np.exp(xv - hi)
    total = ex.sum(axis=axis, keepdims=True)
    out_keep = np.log(total) + hi
    soft = ex / total
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [soft * g]

    return x.tape.record(out, [x], vjp)


def row_softmax(x: Var):
    """Softmax over the last axis of a matrix, max-shifted for stability."""
    xv = x.values
    if xv.ndim != 2:
        raise DimensionError(f"row_softmax expects a matrix, got shape {xv.shape}")
    shifted = xv - xv.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return [out * (g - dot)]

    return x.tape.record(out, [x], vjp)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def normalize(x: Var, mode: str = "instance", epsilon: float = 1e-5,
              gain: Var | None = None, bias: Var | None = None):
    """Normalize each row to zero mean / unit variance over the feature axis.

    ``instance`` mode is the plain normalization; ``layer`` mode additionally
    applies a learnable per-feature gain and bias.
    """
    if epsilon <= 0:
        raise ConfigError(f"normalize epsilon must be > 0, got {epsilon}")
    if mode not in ("instance", "layer"):
        raise ConfigError(f"unknown normalize mode {mode!r}")
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    y = div(centered, sqrt(add(var, epsilon)))
    if mode == "layer":
        if gain is None or bias is None:
            raise ConfigError("layer mode requires gain and bias")
        y = add(mul(y, gain), bias)
    return y


def linear(x: Var, w, b=None):
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y
