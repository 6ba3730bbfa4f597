"""Point-wise position and color encoders.

Each branch lifts its raw input (bearing 2-vector or RGB 3-vector) to width
``d`` and refines it through residual blocks; the two branch outputs are
summed into the local point feature.  Everything is strictly point-wise: row
``n`` of the output depends on input ``n`` only.
"""

from __future__ import annotations

import numpy as np

from .diffcore import Var, add, leaky_relu, linear, normalize
from .errors import InputError
from .params import ParamBundle, kaiming

N_BLOCKS = 3


def init_encoder_params(rng: np.random.Generator, d: int, slope: float = 0.01) -> ParamBundle:
    params: ParamBundle = {}
    for branch, in_dim in (("pos", 2), ("col", 3)):
        pre = f"enc.{branch}"
        params[f"{pre}.lift.w"] = kaiming(rng, in_dim, d, slope)
        params[f"{pre}.lift.b"] = np.zeros(d)
        for i in range(N_BLOCKS):
            params[f"{pre}.block{i}.lin1.w"] = kaiming(rng, d, d, slope)
            params[f"{pre}.block{i}.lin1.b"] = np.zeros(d)
            params[f"{pre}.block{i}.lin2.w"] = kaiming(rng, d, d, slope)
            params[f"{pre}.block{i}.lin2.b"] = np.zeros(d)
    return params


def _branch(x, params: dict[str, Var], prefix: str, slope: float, eps: float) -> Var:
    h = linear(x, params[f"{prefix}.lift.w"], params[f"{prefix}.lift.b"])
    for i in range(N_BLOCKS):
        inner = linear(h, params[f"{prefix}.block{i}.lin1.w"], params[f"{prefix}.block{i}.lin1.b"])
        inner = leaky_relu(normalize(inner, "instance", eps), slope)
        inner = linear(inner, params[f"{prefix}.block{i}.lin2.w"], params[f"{prefix}.block{i}.lin2.b"])
        h = add(h, inner)
    return h


def encode_points(
    bearings: np.ndarray,
    colors: np.ndarray,
    params: dict[str, Var],
    slope: float = 0.01,
    eps: float = 1e-5,
    use_color: bool = True,
) -> Var:
    """Fused local feature: position embedding plus color embedding.

    ``use_color=False`` drops the color branch entirely (the color-cue
    ablation switch); the output is then independent of ``colors``.
    """
    bearings = np.asarray(bearings, dtype=np.float64).reshape(-1, 2)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if bearings.shape[0] != colors.shape[0]:
        raise InputError(
            f"{bearings.shape[0]} bearings but {colors.shape[0]} colors"
        )
    if bearings.shape[0] == 0:
        raise InputError("encode_points needs at least one point")
    f = _branch(bearings, params, "enc.pos", slope, eps)
    if use_color:
        f = add(f, _branch(colors, params, "enc.col", slope, eps))
    return f
