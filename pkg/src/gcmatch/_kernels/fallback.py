"""Pure-NumPy implementations of the flat-loop kernels.

Semantics (including tie-breaking by lower index) are identical to the
compiled core in ``_core.pyx``; keep the two in sync.
"""

from __future__ import annotations

import numpy as np


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a (n,d) and b (m,d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def assign_labels(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per point; ties go to the lower index."""
    return np.argmin(pairwise_sqdist(points, centers), axis=1).astype(np.int64)


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbors per row (self excluded), ties to the lower index."""
    d2 = pairwise_sqdist(points, points)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps the lower index first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def mutual_top1_pairs(scores: np.ndarray) -> np.ndarray:
    """Pairs (n, m) where each is the other's argmax; ties to lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    best_col = np.argmax(scores, axis=1)
    best_row = np.argmax(scores, axis=0)
    rows = np.arange(scores.shape[0])
    keep = best_row[best_col[rows]] == rows
    pairs = np.stack([rows[keep], best_col[rows][keep]], axis=1)
    return pairs.astype(np.int64)


def triplet_angles(centers: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Angle at each center between every ordered pair of its neighbors.

    Returns angles[x, i, j] = angle between (centers[nbrs[x,j]] - centers[x])
    and (centers[nbrs[x,i]] - centers[x]) in [0, pi].  Coincident centers
    yield angle 0.  atan2(|cross|, dot) is used instead of arccos because it
    stays well-conditioned for nearly parallel vectors.
    """
    centers = np.asarray(centers, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    diffs = centers[neighbors] - centers[:, None, :]  # (X, k, 2)
    dots = np.einsum("xid,xjd->xij", diffs, diffs)
    cross = (
        diffs[:, :, None, 0] * diffs[:, None, :, 1]
        - diffs[:, :, None, 1] * diffs[:, None, :, 0]
    )
    return np.arctan2(np.abs(cross), dots)
