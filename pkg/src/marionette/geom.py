"""Quaternion and rotation helpers.

Conventions used across the package:
  * quaternions are (w, x, y, z), unit norm, float64, world-from-body
  * all ops broadcast over leading batch dimensions
  * the "heading frame" is the yaw-only part of the root orientation; local
    observations are expressed there so policies are heading-invariant
"""

from __future__ import annotations

import numpy as np


def quat_identity(shape=()) -> np.ndarray:
    q = np.zeros(shape + (4,), dtype=np.float64)
    q[..., 0] = 1.0
    return q


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis; much faster than np.cross for small arrays."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast(a0, b0).shape + (3,), dtype=np.float64)
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, 1e-12)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (apply b first, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast(aw, bw).shape + (4,), dtype=np.float64)
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = cross3(u, v)
    return v + 2.0 * (w * uv + cross3(u, uv))


def quat_rotate_inv(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_rotate(quat_conj(q), v)


def quat_from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    s = np.sin(half)
    w = np.cos(half)[..., None] if np.ndim(half) else np.array([np.cos(half)])
    xyz = axis * (s[..., None] if np.ndim(s) else s)
    if np.ndim(half):
        return np.concatenate([w, xyz], axis=-1)
    return np.concatenate([w.reshape(xyz.shape[:-1] + (1,)), xyz], axis=-1)


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix, shape (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def mat_to_quat(m: np.ndarray) -> np.ndarray:
    """Inverse of quat_to_mat, w >= 0 branch-stable."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4), dtype=np.float64)
    for i in range(m.shape[0]):
        r = m[i]
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        if q[i, 0] < 0:
            q[i] *= -1.0
    return quat_normalize(q.reshape(batch + (4,)))


def quat_to_sixd(q: np.ndarray) -> np.ndarray:
    """6-D rotation encoding: first two columns of the rotation matrix.

    Continuous in SO(3), so regression/observation targets avoid the
    double-cover sign flips of raw quaternions. Shape (..., 6).
    """
    m = quat_to_mat(q)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def sixd_to_quat(sixd: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two encoded columns back to a rotation."""
    sixd = np.asarray(sixd, dtype=np.float64)
    a = sixd[..., 0:3]
    b = sixd[..., 3:6]
    x = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    b = b - np.sum(x * b, axis=-1, keepdims=True) * x
    y = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    z = np.cross(x, y)
    m = np.stack([x, y, z], axis=-1)
    return mat_to_quat(m)


def quat_geodesic_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle of the relative rotation a^-1 * b, in [0, pi]."""
    d = quat_mul(quat_conj(a), b)
    w = np.clip(np.abs(d[..., 0]), 0.0, 1.0)
    return 2.0 * np.arccos(w)


def quat_box_minus(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation-vector difference a ⊖ b (axis*angle of a * b^-1), world frame."""
    d = quat_mul(a, quat_conj(b))
    d = np.where(d[..., :1] < 0, -d, d)  # shortest arc
    w = np.clip(d[..., 0], -1.0, 1.0)
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    axis = np.where(s[..., None] > 1e-8, d[..., 1:] / np.maximum(s[..., None], 1e-12), 0.0)
    return axis * angle[..., None]


def quat_integrate(q: np.ndarray, omega_world: np.ndarray, dt: float) -> np.ndarray:
    """Integrate unit quaternion under world-frame angular velocity."""
    omega = np.asarray(omega_world, dtype=np.float64)
    dq = quat_mul(np.concatenate([np.zeros(omega.shape[:-1] + (1,)), omega], axis=-1), q)
    return quat_normalize(q + 0.5 * dt * dq)


def yaw_from_quat(q: np.ndarray) -> np.ndarray:
    """Heading angle: yaw of the body x-axis projected to the ground plane."""
    q = np.asarray(q, dtype=np.float64)
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


def heading_quat(q: np.ndarray) -> np.ndarray:
    """Yaw-only quaternion with the same heading as q."""
    yaw = yaw_from_quat(q)
    half = 0.5 * yaw
    out = np.zeros(np.shape(yaw) + (4,), dtype=np.float64)
    out[..., 0] = np.cos(half)
    out[..., 3] = np.sin(half)
    return out


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2.0 * np.pi)
