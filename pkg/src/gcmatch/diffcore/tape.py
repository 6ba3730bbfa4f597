"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive operation as it executes.  Each
recorded entry keeps the node ids of its inputs and a closure that maps the
output gradient to input gradients (the cached forward values live inside the
closure).  Because entries are appended in execution order, the list is
already a topological order of the DAG and :func:`backward` replays it once,
in reverse.

Arrays are always float64 and treated as immutable once wrapped in a
:class:`Var`.  Distinct tapes are fully independent.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError

Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Var:
    """Handle to one node on a tape: an id plus its forward value."""

    __slots__ = ("tape", "idx", "values")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", idx: int, values: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.values.shape})"

    # Operator sugar; the actual rules live in ops.py (imported lazily to
    # avoid a module cycle).
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class Tape:
    """Ordered record of executed primitives for one forward pass."""

    def __init__(self):
        self._entries: list[tuple[int, tuple[int, ...], Vjp]] = []
        self._n_nodes = 0

    def leaf(self, values) -> Var:
        """Create an input node (no recorded entry, no parents)."""
        arr = np.asarray(values, dtype=np.float64)
        var = Var(self, self._n_nodes, arr)
        self._n_nodes += 1
        return var

    def record(self, values: np.ndarray, parents: Sequence[Var], vjp: Vjp) -> Var:
        """Append one executed primitive and return its output node."""
        for p in parents:
            if p.tape is not self:
                raise ContractError("operands belong to different tapes")
        out = Var(self, self._n_nodes, np.asarray(values, dtype=np.float64))
        self._n_nodes += 1
        self._entries.append((out.idx, tuple(p.idx for p in parents), vjp))
        return out

    def __len__(self):
        return len(self._entries)


def backward(tape: Tape, seed: Var) -> dict[int, np.ndarray]:
    """Accumulate d(seed)/d(node) for every node reachable from *seed*.

    Returns a map from node id to gradient array.  Nodes the seed does not
    depend on are simply absent (their gradient is zero); use
    :func:`grad_or_zero` for uniform access.
    """
    if seed.tape is not tape:
        raise ContractError("seed node does not belong to this tape")
    if seed.values.size != 1:
        raise ContractError(
            f"backward seed must be scalar-valued, got shape {seed.values.shape}"
        )
    grads: dict[int, np.ndarray] = {seed.idx: np.ones_like(seed.values)}
    for out_idx, parent_idxs, vjp in reversed(tape._entries):
        g_out = grads.get(out_idx)
        if g_out is None:
            continue
        parent_grads = vjp(g_out)
        for pidx, pg in zip(parent_idxs, parent_grads):
            if pg is None:
                continue
            acc = grads.get(pidx)
            grads[pidx] = pg if acc is None else acc + pg
    return grads


def grad_or_zero(grads: dict[int, np.ndarray], var: Var) -> np.ndarray:
    """Gradient of *var* from a backward() result, zero if unused."""
    g = grads.get(var.idx)
    if g is None:
        return np.zeros_like(var.values)
    return g


def check_matmul_shapes(a_shape, b_shape):
    if len(a_shape) != 2 or len(b_shape) != 2 or a_shape[1] != b_shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a_shape} x {b_shape}")
