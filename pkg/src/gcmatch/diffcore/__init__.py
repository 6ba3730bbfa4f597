"""Dense-tensor numeric layer with reverse-mode differentiation."""

from .check import gradient_check
from .ops import (
    add,
    clip,
    concat,
    div,
    elu,
    exp,
    gather_elements,
    gather_rows,
    leaky_relu,
    linear,
    log,
    logsumexp,
    matmul,
    max_,
    mean,
    mul,
    neg,
    normalize,
    reshape,
    row_softmax,
    sigmoid,
    sqrt,
    sub,
    sum_,
    transpose,
)
from .tape import Tape, Var, backward, grad_or_zero

__all__ = [
    "Tape",
    "Var",
    "backward",
    "grad_or_zero",
    "gradient_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "leaky_relu",
    "elu",
    "clip",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather_elements",
    "gather_rows",
    "sum_",
    "mean",
    "max_",
    "logsumexp",
    "row_softmax",
    "normalize",
    "linear",
]
