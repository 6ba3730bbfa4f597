"""Match confidence classifier: keep pairs scored at or above the threshold.

Each candidate pair is described by the concatenation of its 2D-side and
3D-side features; a small MLP maps that to a logit and the logistic
probability decides survival.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Var, concat, gather_rows, leaky_relu, linear, reshape, sigmoid
from .errors import ConfigError, InputError
from .geometry import MatchSet
from .params import ParamBundle, kaiming


@dataclass(frozen=True)
class RejectionConfig:
    theta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")


def init_rejection_params(rng: np.random.Generator, d: int, slope: float = 0.01) -> ParamBundle:
    """3-layer MLP on the 4d pair feature (two sides, each 2d wide)."""
    widths = [4 * d, 2 * d, d, 1]
    params: ParamBundle = {}
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"rej.l{i}.w"] = kaiming(rng, w_in, w_out, slope)
        params[f"rej.l{i}.b"] = np.zeros(w_out)
    return params


def pair_probabilities(
    m_init: MatchSet,
    f_p: Var,
    f_q: Var,
    params: dict[str, Var],
    slope: float = 0.01,
) -> Var:
    """Differentiable per-pair match probability, shape (|M_init|, 1)."""
    pairs = m_init.pairs
    if len(pairs) and (pairs[:, 0].max() >= f_p.shape[0] or pairs[:, 1].max() >= f_q.shape[0]):
        raise InputError("match indices exceed the feature matrices")
    if len(pairs) and (pairs.min() < 0):
        raise InputError("match indices must be nonnegative")
    feats = concat([gather_rows(f_p, pairs[:, 0]), gather_rows(f_q, pairs[:, 1])], axis=1)
    h = feats
    for i in range(3):
        h = linear(h, params[f"rej.l{i}.w"], params[f"rej.l{i}.b"])
        if i < 2:
            h = leaky_relu(h, slope)
    return sigmoid(h)


def classify_matches(
    m_init: MatchSet,
    f_p: Var,
    f_q: Var,
    params: dict[str, Var],
    cfg: RejectionConfig = RejectionConfig(),
    slope: float = 0.01,
) -> tuple[MatchSet, np.ndarray]:
    """Final matches (probability >= theta) plus all candidate probabilities."""
    if len(m_init) == 0:
        return MatchSet.empty(), np.empty(0)
    probs = pair_probabilities(m_init, f_p, f_q, params, slope).values.ravel()
    keep = probs >= cfg.theta
    kept = MatchSet(m_init.pairs[keep], probs[keep])
    return kept, probs
