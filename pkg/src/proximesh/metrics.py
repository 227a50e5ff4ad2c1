"""Joint-error metrics reported in millimetres.

Joint arrays are metre-valued (J, 3) world positions; every metric
converts to millimetres on output. The unaligned error is the primary
number; the similarity-aligned variant factors out global rotation,
translation and scale to isolate articulation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MM_PER_M = 1000.0

# Singular-value ratio below which the joint cloud counts as collinear.
_DEGENERATE_RATIO = 1e-9


def _check_pair(estimated: np.ndarray, reference: np.ndarray) -> tuple:
    estimated = np.asarray(estimated, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimated.ndim != 2 or estimated.shape[1] != 3:
        raise ValueError(f"expected (J, 3) joints, got {estimated.shape}")
    if estimated.shape != reference.shape:
        raise ValueError(
            f"joint sets differ: {estimated.shape} vs {reference.shape}")
    if estimated.shape[0] == 0:
        raise ValueError("empty joint sets")
    return estimated, reference


def mpjpe(estimated: np.ndarray, reference: np.ndarray, *,
          align_root: bool = False) -> float:
    """Mean per-joint position error in millimetres.

    Args:
        estimated: (J, 3) estimated joint positions in metres.
        reference: (J, 3) reference joint positions in metres.
        align_root: subtract joint 0 from each set first, scoring only
            the articulation relative to the root.

    Returns:
        Mean Euclidean joint distance in millimetres.
    """
    estimated, reference = _check_pair(estimated, reference)
    if align_root:
        estimated = estimated - estimated[0]
        reference = reference - reference[0]
    return float(MM_PER_M
                 * np.linalg.norm(estimated - reference, axis=1).mean())


@dataclass(frozen=True)
class SimilarityTransform:
    """Least-squares similarity map ``x -> scale * rotation @ x + shift``.

    Attributes:
        rotation: (3, 3) proper rotation.
        scale: uniform scale factor.
        shift: (3,) translation.
        degenerate: True when the source cloud was too flat to fix a
            rotation, in which case the map is translation-only.
    """

    rotation: np.ndarray
    scale: float
    shift: np.ndarray
    degenerate: bool

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Maps (N, 3) points through the transform."""
        return self.scale * points @ self.rotation.T + self.shift


def similarity_align(source: np.ndarray,
                     target: np.ndarray) -> SimilarityTransform:
    """Closed-form similarity registration of source onto target.

    Minimizes ``sum_i |s R source_i + t - target_i|^2`` over rotation,
    uniform scale and translation. Collinear (or fewer than three)
    source points cannot pin down a rotation; the fit then degrades to
    matching centroids with identity rotation and unit scale, flagged
    on the returned transform.

    Args:
        source: (N, 3) points to move.
        target: (N, 3) points to match.

    Returns:
        SimilarityTransform with the optimal parameters.
    """
    source, target = _check_pair(source, target)
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    x = source - mu_s
    y = target - mu_t
    cov = y.T @ x / source.shape[0]
    u, sing, vt = np.linalg.svd(cov)
    flat = source.shape[0] < 3 or sing[0] <= 0.0 \
        or sing[1] <= _DEGENERATE_RATIO * sing[0]
    if flat:
        return SimilarityTransform(np.eye(3), 1.0, mu_t - mu_s, True)
    sign = np.ones(3)
    if np.linalg.det(u @ vt) < 0.0:
        sign[-1] = -1.0
    rotation = u @ np.diag(sign) @ vt
    var_s = (x * x).sum() / source.shape[0]
    scale = float((sing * sign).sum() / var_s)
    shift = mu_t - scale * rotation @ mu_s
    return SimilarityTransform(rotation, scale, shift, False)


def pa_mpjpe(estimated: np.ndarray, reference: np.ndarray) -> float:
    """MPJPE after optimal similarity alignment, in millimetres.

    Never exceeds the unaligned error. The fitted transform minimizes
    the squared error, which on outlier-heavy sets can still raise the
    mean of unsquared norms; the identity alignment is kept in that
    case, so aligned <= raw holds for every pair.
    """
    estimated, reference = _check_pair(estimated, reference)
    transform = similarity_align(estimated, reference)
    aligned = mpjpe(transform.apply(estimated), reference)
    return min(aligned, mpjpe(estimated, reference))
