"""Finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ContractError, NumericError
from .tape import Tape, backward, grad_or_zero


def gradient_check(f, point, step: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` takes a leaf Var and returns a scalar Var.  Returns the maximum of
    ``|a - b| / max(1, |a|, |b|)`` over all coordinates, where ``a`` is the
    tape gradient and ``b`` the central difference ``(f(x+h) - f(x-h)) / 2h``.
    """
    if step <= 0:
        raise ConfigError(f"step must be > 0, got {step}")
    point = np.asarray(point, dtype=np.float64)

    def evaluate(values) -> float:
        tape = Tape()
        y = f(tape.leaf(values))
        if y.values.size != 1:
            raise ContractError(f"f must be scalar-valued, got shape {y.values.shape}")
        return float(y.values.reshape(()))

    tape = Tape()
    x = tape.leaf(point)
    y = f(x)
    if y.values.size != 1:
        raise ContractError(f"f must be scalar-valued, got shape {y.values.shape}")
    if not np.isfinite(y.values).all():
        raise NumericError("f is not finite at the check point")
    analytic = grad_or_zero(backward(tape, y), x)

    numeric = np.zeros_like(point)
    flat = point.ravel()
    for i in range(flat.size):
        stash = flat[i]
        flat[i] = stash + step
        fp = evaluate(point)
        flat[i] = stash - step
        fm = evaluate(point)
        flat[i] = stash
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite at probe for coordinate {i}")
        numeric.ravel()[i] = (fp - fm) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())
