"""Flat-loop kernels with a compiled core and a NumPy fallback.

The compiled extension is preferred when present; set ``GCMATCH_PURE_PYTHON=1``
to force the fallback (used by the backend-equivalence tests and the
benchmark).  Both backends implement identical semantics.
"""

import os

from . import fallback

if os.environ.get("GCMATCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = fallback
    HAVE_COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        _impl = fallback
        HAVE_COMPILED = False

pairwise_sqdist = _impl.pairwise_sqdist
assign_labels = _impl.assign_labels
knn_indices = _impl.knn_indices
mutual_top1_pairs = _impl.mutual_top1_pairs
triplet_angles = _impl.triplet_angles

__all__ = [
    "HAVE_COMPILED",
    "fallback",
    "pairwise_sqdist",
    "assign_labels",
    "knn_indices",
    "mutual_top1_pairs",
    "triplet_angles",
]
