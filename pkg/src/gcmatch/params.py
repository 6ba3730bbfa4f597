"""Parameter bundles: flat name->array dicts shared by init, training, and IO.

A bundle is an ordered ``dict[str, np.ndarray]``.  Forward passes lift the
whole bundle onto a tape once (:func:`lift`) and index the resulting Vars by
name; the optimizer and the weights file work on the raw arrays.
"""

from __future__ import annotations

import numpy as np

from .diffcore import Tape, Var

ParamBundle = dict[str, np.ndarray]


def kaiming(rng: np.random.Generator, fan_in: int, fan_out: int, slope: float = 0.01) -> np.ndarray:
    """Fan-in scaled normal init, gain adjusted for a LeakyReLU stack."""
    std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def lift(tape: Tape, bundle: ParamBundle) -> dict[str, Var]:
    """Create one leaf Var per parameter on the given tape."""
    return {name: tape.leaf(arr) for name, arr in bundle.items()}
