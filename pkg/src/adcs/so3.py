"""
Rotation algebra on SO(3).

Attitudes are plain ``(3, 3)`` float arrays mapping body coordinates to
inertial coordinates. Vectors are ``(3,)`` arrays. All functions are pure.
"""

import math

import numpy as np

from .errors import InvalidRotation, NotSkew

SMALL_ANGLE = 1e-6
ROTATION_TOL = 1e-9


def hat(v):
    """Cross-product matrix: ``hat(v) @ w == np.cross(v, w)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vex(M, tol=1e-9):
    """Inverse of :func:`hat`.

    The asymmetric part of ``M`` is averaged before extraction, so round-off
    symmetric residue is tolerated. A symmetric part larger than ``tol``
    (relative to the matrix scale, with an absolute floor) raises ``NotSkew``.
    """
    M = np.asarray(M, dtype=float)
    sym = 0.5 * (M + M.T)
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(sym)) > tol * scale:
        raise NotSkew(f"symmetric part {np.max(np.abs(sym)):.3e} exceeds {tol:.1e}")
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def exp_so3(v):
    """Rodrigues formula for ``expm(hat(v))``."""
    v = np.asarray(v, dtype=float)
    th2 = float(v @ v)
    th = math.sqrt(th2)
    K = hat(v)
    if th < SMALL_ANGLE:
        # series: a = sin(t)/t, b = (1 - cos t)/t^2
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    return np.eye(3) + a * K + b * (K @ K)


def principal_angle(R):
    """Rotation angle of ``R`` in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return math.atan2(float(np.linalg.norm(w)), c)


def log_so3(R):
    """Rotation vector of ``R`` with norm in ``[0, pi]``.

    At angle pi the axis is read from the column of ``(R + R^T)/2 + I`` with
    the largest diagonal entry and that entry's component is taken positive.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    th = math.atan2(s, c)
    if th < SMALL_ANGLE:
        return (1.0 + th * th / 6.0) * w
    if c > -0.9:
        return (th / s) * w
    # near pi: sin(th) is small, recover the axis from the symmetric part
    B = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / math.sqrt(B[k, k])
    if s > 0.0 and axis @ w < 0.0:
        axis = -axis
    elif s == 0.0 and axis[k] < 0.0:
        axis = -axis
    axis /= np.linalg.norm(axis)
    return th * axis


def is_rotation(R, tol=ROTATION_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def as_rotation(R, tol=ROTATION_TOL):
    """Return ``R`` as a float array, raising ``InvalidRotation`` if it is not in SO(3)."""
    R = np.array(R, dtype=float)
    if not is_rotation(R, tol):
        raise InvalidRotation("matrix is not a rotation within tolerance")
    return R


def project_to_so3(M):
    """Closest rotation to ``M`` in the Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    if np.linalg.det(U @ Vt) < 0.0:
        U[:, -1] = -U[:, -1]
    return U @ Vt


def right_jacobian(v):
    """Right Jacobian of the exponential map.

    ``exp_so3(v + d) ~= exp_so3(v) @ exp_so3(right_jacobian(v) @ d)`` for small ``d``.
    """
    v = np.asarray(v, dtype=float)
    th2 = float(v @ v)
    th = math.sqrt(th2)
    K = hat(v)
    if th < SMALL_ANGLE:
        a = 0.5 - th2 / 24.0
        b = 1.0 / 6.0 - th2 / 120.0
    else:
        a = (1.0 - math.cos(th)) / th2
        b = (th - math.sin(th)) / (th2 * th)
    return np.eye(3) - a * K + b * (K @ K)
