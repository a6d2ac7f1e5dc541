"""Axis-angle / rotation-matrix geometry on SO(3).

All functions are vectorized: axis-angle inputs have shape ``(..., 3)`` and
rotation matrices ``(..., 3, 3)``. A single vector or matrix is the
``...``-empty case.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-4
NEAR_PI = np.pi - 1e-4
ORTHO_TOL = 1e-6

EULER_CONVENTIONS = ("ZXZ", "ZYZ")


def _as_vectors(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (3,):
        raise ValueError(f"{name} must have trailing dimension 3, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y


def _as_matrices(R, name: str = "R") -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise ValueError(f"{name} must have trailing shape (3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError(f"{name} contains non-finite values")
    return R


def hat(y) -> np.ndarray:
    """Skew-symmetric matrix ``[y]_x`` such that ``hat(a) @ b == cross(a, b)``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape[:-1] + (3, 3))
    out[..., 0, 1] = -y[..., 2]
    out[..., 0, 2] = y[..., 1]
    out[..., 1, 0] = y[..., 2]
    out[..., 1, 2] = -y[..., 0]
    out[..., 2, 0] = -y[..., 1]
    out[..., 2, 1] = y[..., 0]
    return out


def vee(M) -> np.ndarray:
    """Inverse of :func:`hat` (reads the skew part only)."""
    M = np.asarray(M, dtype=float)
    return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)


def _rodrigues_coefficients(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``sin(t)/t`` and ``(1 - cos(t))/t**2`` with a Taylor branch near 0."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def exp_map(y) -> np.ndarray:
    """Rodrigues exponential map from axis-angle vectors to rotation matrices.

    Raises:
        ValueError: if ``y`` contains non-finite entries.
    """
    y = _as_vectors(y)
    theta = np.linalg.norm(y, axis=-1)
    a, b = _rodrigues_coefficients(theta)
    K = hat(y)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def check_rotation(R, tol: float = ORTHO_TOL) -> np.ndarray:
    """Validate that ``R`` is (a stack of) proper rotations and return it as floats."""
    R = _as_matrices(R)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(axis=(-2, -1))
    det = np.linalg.det(R)
    if np.any(err > tol) or np.any(np.abs(det - 1.0) > tol):
        raise ValueError(
            f"not a rotation matrix (max |R^T R - I| = {np.max(err):.3g}, "
            f"det range [{np.min(det):.6g}, {np.max(det):.6g}])"
        )
    return R


def log_map(R, validate: bool = True) -> np.ndarray:
    """Logarithm map from rotation matrices to axis-angle vectors.

    The returned vectors have norm in ``[0, pi]``. Three regimes are used:
    a series expansion for angles below ``1e-4``, the skew-part formula in the
    bulk, and axis extraction from the symmetric part ``(R + R^T)/2`` above
    ``pi - 1e-4``. In the last regime the axis sign is taken from the skew part
    where it is still resolvable; at exactly ``pi`` both signs describe the same
    rotation and the one with a non-negative largest component is returned.

    Raises:
        ValueError: if ``R`` is not orthonormal with unit determinant.
    """
    R = check_rotation(R) if validate else np.asarray(R, dtype=float)
    w = 0.5 * vee(R - np.swapaxes(R, -1, -2))  # sin(theta) * axis
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    near_pi = theta > NEAR_PI
    safe_s = np.where(small | near_pi, 1.0, s)
    t2 = theta * theta
    # theta / sin(theta)
    scale = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / safe_s)
    y = scale[..., None] * w

    if np.any(near_pi):
        y = np.array(y, copy=True)
        y[near_pi] = _log_near_pi(R[near_pi], theta[near_pi], w[near_pi])
    return y


def _log_near_pi(R: np.ndarray, theta: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (R + R^T)/2 = cos(t) I + (1 - cos(t)) v v^T
    sym = 0.5 * (R + np.swapaxes(R, -1, -2))
    c = np.cos(theta)
    vvT = (sym - c[:, None, None] * np.eye(3)) / (1.0 - c)[:, None, None]
    idx = np.argmax(np.diagonal(vvT, axis1=-2, axis2=-1), axis=-1)
    rows = np.arange(len(idx))
    col = vvT[rows, :, idx]
    axis = col / np.linalg.norm(col, axis=-1, keepdims=True)
    # sign from the skew part when resolvable, else a deterministic choice
    dot = np.einsum("ni,ni->n", axis, w)
    flip = np.where(
        np.abs(dot) > 1e-15,
        dot < 0.0,
        axis[rows, np.argmax(np.abs(axis), axis=-1)] < 0.0,
    )
    axis[flip] *= -1.0
    return theta[:, None] * axis


def geodesic_distance(R1, R2) -> np.ndarray:
    """Angle of the relative rotation ``R1^T R2``, in radians, in ``[0, pi]``."""
    R1 = _as_matrices(R1, "R1")
    R2 = _as_matrices(R2, "R2")
    tr = np.einsum("...ij,...ij->...", R1, R2)  # trace(R1^T R2)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def exp_jacobian(y) -> np.ndarray:
    """Right Jacobian ``J_r(y)`` of the exponential map.

    ``exp_map(y + e) ~= exp_map(y) @ exp_map(J_r(y) @ e)`` for small ``e``.
    """
    y = _as_vectors(y)
    theta = np.linalg.norm(y, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    # (1 - cos t)/t^2 and (t - sin t)/t^3
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t * t * t))
    K = hat(y)
    return np.eye(3) - b[..., None, None] * K + c[..., None, None] * (K @ K)


def canonicalize(y) -> np.ndarray:
    """Map an axis-angle vector to its representative with norm in ``[0, pi]``."""
    return log_map(exp_map(y), validate=False)


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrix of (a stack of) quaternions in ``(w, x, y, z)`` order."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def sample_uniform_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotations from normalized 4-D Gaussian quaternions.

    Returns a single ``(3, 3)`` matrix when ``size`` is None, else ``(size, 3, 3)``.
    """
    shape = (4,) if size is None else (size, 4)
    return quaternion_to_matrix(rng.standard_normal(shape))


def _elemental(axis: str, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(angle), np.zeros_like(angle)
    if axis == "X":
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    else:
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def wrap_angle(a) -> np.ndarray:
    """Wrap angles into ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def euler_to_rotation(az, el, ct, convention: str = "ZXZ") -> np.ndarray:
    """Compose intrinsic elemental rotations ``R_a(az) @ R_b(el) @ R_c(ct)``.

    ``convention`` names the three axes in order, e.g. ``"ZXZ"`` gives
    ``Rz(az) @ Rx(el) @ Rz(ct)``. All elemental rotations are right-handed
    (positive angle = counter-clockwise about the axis), so
    ``euler_to_rotation(a, 0, 0, "ZXZ") == exp_map([0, 0, a])``.

    Raises:
        ValueError: for an unknown convention or non-finite angles.
    """
    if convention not in EULER_CONVENTIONS:
        raise ValueError(f"unknown Euler convention {convention!r}; expected one of {EULER_CONVENTIONS}")
    angles = [wrap_angle(a) for a in np.broadcast_arrays(az, el, ct)]
    if not all(np.all(np.isfinite(a)) for a in angles):
        raise ValueError("Euler angles must be finite")
    R = _elemental(convention[0], angles[0])
    R = R @ _elemental(convention[1], angles[1])
    return R @ _elemental(convention[2], angles[2])
