"""Small rotation and frame utilities shared across the package.

Conventions: right-handed world frame with z up, rotations as 3x3
matrices acting on column-stacked points from the left, axis-angle
vectors in radians with the angle encoded as the vector norm.
"""

import numpy as np

# Below this angle the Rodrigues formula switches to its series
# expansion to avoid dividing by a vanishing norm.
_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Returns the cross-product matrix of a 3-vector.

    Args:
        v: (3,) vector.

    Returns:
        (3, 3) matrix S such that S @ x == np.cross(v, x).
    """
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Converts an axis-angle vector to a rotation matrix.

    Args:
        axis_angle: (3,) vector whose norm is the rotation angle.

    Returns:
        (3, 3) rotation matrix. Exactly the identity for a zero vector.
    """
    angle = float(np.linalg.norm(axis_angle))
    if angle < _SMALL_ANGLE:
        return np.eye(3)
    k = skew(axis_angle / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rodrigues_batch(axis_angles: np.ndarray) -> np.ndarray:
    """Vectorized axis-angle to rotation matrix conversion.

    Args:
        axis_angles: (..., 3) axis-angle vectors.

    Returns:
        (..., 3, 3) rotation matrices, identity where the norm is ~0.
    """
    aa = np.asarray(axis_angles, dtype=float)
    shape = aa.shape[:-1]
    flat = aa.reshape(-1, 3)
    angles = np.linalg.norm(flat, axis=1)
    safe = np.where(angles < _SMALL_ANGLE, 1.0, angles)
    axes = flat / safe[:, None]

    k = np.zeros((flat.shape[0], 3, 3))
    k[:, 0, 1] = -axes[:, 2]
    k[:, 0, 2] = axes[:, 1]
    k[:, 1, 0] = axes[:, 2]
    k[:, 1, 2] = -axes[:, 0]
    k[:, 2, 0] = -axes[:, 1]
    k[:, 2, 1] = axes[:, 0]
    sin = np.sin(angles)[:, None, None]
    cos = np.cos(angles)[:, None, None]
    rots = np.eye(3) + sin * k + (1.0 - cos) * (k @ k)
    rots[angles < _SMALL_ANGLE] = np.eye(3)
    return rots.reshape(*shape, 3, 3)


def so3_right_jacobian(axis_angle: np.ndarray) -> np.ndarray:
    """Right Jacobian of the SO(3) exponential map.

    Satisfies exp(theta + delta) ~= exp(theta) @ exp(J_r(theta) @ delta)
    for small delta, which converts partial derivatives with respect to
    axis-angle coordinates into local angular-velocity form.

    Args:
        axis_angle: (3,) axis-angle vector.

    Returns:
        (3, 3) right Jacobian matrix.
    """
    angle = float(np.linalg.norm(axis_angle))
    k = skew(axis_angle)
    if angle < 1e-5:
        # Series expansion; the quadratic term keeps finite-difference
        # agreement tight near zero.
        return np.eye(3) - 0.5 * k + (1.0 / 6.0) * (k @ k)
    a2 = angle * angle
    c1 = (1.0 - np.cos(angle)) / a2
    c2 = (angle - np.sin(angle)) / (a2 * angle)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def so3_right_jacobian_batch(axis_angle: np.ndarray) -> np.ndarray:
    """Right Jacobians for a stack of axis-angle vectors.

    Args:
        axis_angle: (..., 3) axis-angle vectors.

    Returns:
        (..., 3, 3) right Jacobian matrices, matching
        so3_right_jacobian elementwise.
    """
    aa = np.asarray(axis_angle, dtype=float)
    shape = aa.shape[:-1]
    flat = aa.reshape(-1, 3)
    angles = np.linalg.norm(flat, axis=1)
    k = np.zeros((flat.shape[0], 3, 3))
    k[:, 0, 1] = -flat[:, 2]
    k[:, 0, 2] = flat[:, 1]
    k[:, 1, 0] = flat[:, 2]
    k[:, 1, 2] = -flat[:, 0]
    k[:, 2, 0] = -flat[:, 1]
    k[:, 2, 1] = flat[:, 0]
    kk = k @ k
    small = angles < 1e-5
    a2 = np.where(small, 1.0, angles * angles)
    a3 = np.where(small, 1.0, a2 * angles)
    c1 = np.where(small, 0.5, (1.0 - np.cos(angles)) / a2)
    c2 = np.where(small, 1.0 / 6.0, (angles - np.sin(angles)) / a3)
    out = np.eye(3) - c1[:, None, None] * k + c2[:, None, None] * kk
    return out.reshape(*shape, 3, 3)


def clamp_axis_angle(axis_angle: np.ndarray, max_angle: float = np.pi) -> np.ndarray:
    """Rescales an axis-angle vector so its norm does not exceed max_angle."""
    angle = float(np.linalg.norm(axis_angle))
    if angle <= max_angle or angle < _SMALL_ANGLE:
        return np.asarray(axis_angle, dtype=float)
    return np.asarray(axis_angle, dtype=float) * (max_angle / angle)


def look_at_rotation(eye: np.ndarray, target: np.ndarray, up: np.ndarray | None = None) -> np.ndarray:
    """Builds a camera orientation looking from eye toward target.

    The returned matrix has the camera axes as columns in world
    coordinates: x right, y down, z forward (toward the target).

    Args:
        eye: (3,) camera position.
        target: (3,) point the optical axis passes through.
        up: (3,) approximate up direction, defaults to world +z.

    Returns:
        (3, 3) rotation matrix.

    Raises:
        ValueError: if eye and target coincide or up is parallel to
            the viewing direction.
    """
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
    forward = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        # Looking straight along up; pick an arbitrary stable right axis.
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        rnorm = np.linalg.norm(right)
        if rnorm < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
            rnorm = np.linalg.norm(right)
    right = right / rnorm
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def is_rotation(mat: np.ndarray, tol: float = 1e-6) -> bool:
    """Checks that mat is orthonormal with determinant +1 within tol."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (3, 3):
        return False
    if not np.all(np.isfinite(mat)):
        return False
    if np.max(np.abs(mat.T @ mat - np.eye(3))) > tol:
        return False
    return abs(float(np.linalg.det(mat)) - 1.0) <= tol
