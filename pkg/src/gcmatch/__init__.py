"""gcmatch: descriptor-free 2D-3D keypoint matching and camera localization.

Keypoints and 3D points are lifted to bearing vectors, encoded from position
and color, enriched with cluster-level geometric context, matched through
cluster-constrained attention and Sinkhorn optimal transport, pruned by a
confidence classifier, and finally fed to P3P-RANSAC pose estimation.
"""

from ._kernels import HAVE_COMPILED

__version__ = "0.1.0"

__all__ = ["HAVE_COMPILED", "__version__"]
