"""Rotation representations: continuous 6D, matrices, quaternions, Euler angles."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from . import tensor as tc
from .tensor import Tensor

_DEGENERATE = 1e-8


def _normalize(v: Tensor) -> Tensor:
    return v / tc.sqrt((v * v).sum(axis=-1, keepdims=True))


def rot6d_to_matrix(r):
    """Gram-Schmidt a 6D rotation (two stacked columns) into a 3x3 rotation matrix.

    Accepts a ``Tensor`` (differentiable) or an array of shape ``[..., 6]``;
    returns the same kind with shape ``[..., 3, 3]``.
    """
    is_tensor = isinstance(r, Tensor)
    t = r if is_tensor else Tensor(np.asarray(r, dtype=np.float64))
    if t.shape[-1] != 6:
        raise ValueError(f"6D rotation needs a trailing axis of 6, got {t.shape}")
    a1, a2 = t.data[..., 0:3], t.data[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < _DEGENERATE):
        raise ValueError("degenerate 6D rotation: first column is zero")
    b1d = a1 / n1[..., None]
    resid = a2 - (b1d * a2).sum(-1, keepdims=True) * b1d
    if np.any(np.linalg.norm(resid, axis=-1) < _DEGENERATE * np.maximum(1.0, np.linalg.norm(a2, axis=-1))):
        raise ValueError("degenerate 6D rotation: columns are parallel or second column is zero")

    b1 = _normalize(t[..., 0:3])
    a2t = t[..., 3:6]
    b2 = _normalize(a2t - (b1 * a2t).sum(axis=-1, keepdims=True) * b1)
    b3 = tc.cross(b1, b2)
    R = tc.stack([b1, b2, b3], axis=-1)
    return R if is_tensor else R.data


def matrix_to_rot6d(R, check: bool = True):
    """First two columns of ``R`` laid out as ``(c1, c2)``."""
    if isinstance(R, Tensor):
        return tc.concat([R[..., :, 0], R[..., :, 1]], axis=-1)
    R = np.asarray(R)
    if check:
        check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def check_rotation(R: np.ndarray, tol: float = 1e-4) -> None:
    R = np.asarray(R, dtype=np.float64)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(initial=0.0)
    det = np.abs(np.linalg.det(R) - 1.0).max(initial=0.0) if R.size else 0.0
    if ortho > tol or det > tol:
        raise ValueError(f"not a rotation matrix (orthonormality error {ortho:.2e}, det error {det:.2e})")


def matrix_to_quat(R: np.ndarray, check: bool = True) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    if check:
        check_rotation(R)
    m = R.reshape(-1, 3, 3)
    tr = np.trace(m, axis1=-2, axis2=-1)
    # candidates 4w^2, 4x^2, 4y^2, 4z^2; pick the largest for stability
    cand = np.stack([1 + tr,
                     1 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2],
                     1 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2],
                     1 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2]], axis=-1)
    best = cand.argmax(axis=-1)
    s = 2.0 * np.sqrt(np.maximum(np.take_along_axis(cand, best[:, None], -1)[:, 0], 1e-300))
    d10, d02, d21 = m[:, 1, 0] - m[:, 0, 1], m[:, 0, 2] - m[:, 2, 0], m[:, 2, 1] - m[:, 1, 2]
    s01, s02, s12 = m[:, 0, 1] + m[:, 1, 0], m[:, 0, 2] + m[:, 2, 0], m[:, 1, 2] + m[:, 2, 1]
    options = np.stack([
        np.stack([s / 4, d21 / s, d02 / s, d10 / s], -1),
        np.stack([d21 / s, s / 4, s01 / s, s02 / s], -1),
        np.stack([d02 / s, s01 / s, s / 4, s12 / s], -1),
        np.stack([d10 / s, s02 / s, s12 / s, s / 4], -1),
    ], 1)
    q = options[np.arange(m.shape[0]), best]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q = canonical_quat(q)
    return q.reshape(R.shape[:-2] + (4,))


def canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0, -q, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([aw * bw - ax * bx - ay * by - az * bz,
                     aw * bx + ax * bw + ay * bz - az * by,
                     aw * by - ax * bz + ay * bw + az * bx,
                     aw * bz + ax * by - ay * bx + az * bw], -1)


def slerp(q0: np.ndarray, q1: np.ndarray, t) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions.

    ``t`` broadcasts against the leading axes of ``q0``/``q1``.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    for q in (q0, q1):
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
            raise ValueError("slerp needs unit quaternions")
    t = np.asarray(t, dtype=np.float64)[..., None]
    dot = (q0 * q1).sum(-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.clip(np.abs(dot), -1.0, 1.0)
    theta = np.arccos(dot)
    small = theta < 1e-7
    sin_theta = np.where(small, 1.0, np.sin(theta))
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / sin_theta)
    w1 = np.where(small, t, np.sin(t * theta) / sin_theta)
    out = w0 * q0 + w1 * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def euler_to_matrix(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler angles (BVH convention, e.g. ``"ZXY"``) to matrices."""
    angles = np.asarray(angles_deg, dtype=np.float64)
    flat = angles.reshape(-1, 3)
    return Rotation.from_euler(order.upper(), flat, degrees=True).as_matrix().reshape(angles.shape[:-1] + (3, 3))


def matrix_to_euler(R: np.ndarray, order: str) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    return Rotation.from_matrix(flat).as_euler(order.upper(), degrees=True).reshape(R.shape[:-2] + (3,))


def identity_6d(shape=()) -> np.ndarray:
    return np.broadcast_to(np.array([1.0, 0, 0, 0, 1, 0]), tuple(shape) + (6,)).copy()
