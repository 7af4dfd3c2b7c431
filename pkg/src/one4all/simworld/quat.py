"""Quaternion helpers. Quaternions are (w, x, y, z) numpy arrays.

The end-effector camera looks along its local +x axis.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

FORWARD = np.array([1.0, 0.0, 0.0])
UP = np.array([0.0, 0.0, 1.0])
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    return q if q[0] >= 0 else -q


def multiply(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def rotate(q, v) -> np.ndarray:
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def from_matrix(m) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(m).as_quat()
    return normalize([w, x, y, z])


def from_yaw(angle: float) -> np.ndarray:
    return np.array([math.cos(angle / 2), 0.0, 0.0, math.sin(angle / 2)])


def angle_between(q1, q2) -> float:
    """Rotation angle (radians) taking q1 to q2."""
    d = abs(float(np.dot(normalize(q1), normalize(q2))))
    return 2.0 * math.acos(min(1.0, d))


def look_at(eye, target, up=UP) -> np.ndarray:
    """Orientation whose forward (+x) axis points from *eye* to *target*."""
    f = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    norm = np.linalg.norm(f)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    f = f / norm
    left = np.cross(up, f)
    if np.linalg.norm(left) < 1e-9:
        # looking straight up or down: any horizontal left axis will do
        left = np.cross(np.array([1.0, 0.0, 0.0]) if abs(f[0]) < 0.9 else np.array([0.0, 1.0, 0.0]), f)
    left = left / np.linalg.norm(left)
    top = np.cross(f, left)
    return from_matrix(np.column_stack([f, left, top]))
