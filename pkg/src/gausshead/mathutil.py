"""Small vector-math helpers shared across the pipeline.

Quaternions are (w, x, y, z). All arrays are float64 unless a binary
format dictates otherwise.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def normalize(v: np.ndarray, axis: int = -1, fallback: np.ndarray | None = None) -> np.ndarray:
    """Unit-normalize along *axis*; zero-length rows get *fallback* (or stay zero)."""
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    safe = np.maximum(n, EPS)
    out = v / safe
    if fallback is not None:
        bad = (n < EPS).squeeze(axis)
        if np.any(bad):
            out = np.where((n < EPS), np.broadcast_to(fallback, v.shape), out)
    return out


def rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix for *angle* radians about unit *axis*."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / max(np.linalg.norm(a), EPS)
    k = np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions, shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
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


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return normalize(q, axis=-1)
