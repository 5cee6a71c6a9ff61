"""Heisenberg group arithmetic in exponential coordinates of the first kind.

Points of H^n are float arrays whose last axis has length 2n+1; every
function here broadcasts over leading axes. The layout is
``(x_1, ..., x_n, x_{n+1}, ..., x_{2n}, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelDims:
    n: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def homog_dim(self) -> int:
        return 2 * self.n + 2

    @property
    def contraction_exp(self) -> int:
        return 2 * self.n + 3

    @classmethod
    def from_dim(cls, dim: int) -> "ModelDims":
        if dim < 3 or dim % 2 == 0:
            raise ValueError(f"a Heisenberg point has odd length >= 3, got {dim}")
        return cls((dim - 1) // 2)


def as_point(a, n: int | None = None) -> np.ndarray:
    """Coerce to a float array of group points, checking shape and finiteness."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        raise ValueError("a group point needs at least one axis")
    dims = ModelDims.from_dim(a.shape[-1])
    if n is not None and dims.n != n:
        raise ValueError(f"expected points of H^{n}, got length {a.shape[-1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("group point has non-finite coordinates")
    return a


def identity(n: int = 1) -> np.ndarray:
    return np.zeros(2 * n + 1)


def symplectic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_j (a_j b_{n+j} - a_{n+j} b_j), broadcasting over leading axes."""
    n = (a.shape[-1] - 1) // 2
    return np.sum(a[..., :n] * b[..., n:2 * n] - a[..., n:2 * n] * b[..., :n], axis=-1)


def compose(a, b) -> np.ndarray:
    a = as_point(a)
    b = as_point(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return compose_raw(a, b)


def compose_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Group law without validation; keeps the wider of the two dtypes."""
    out = a + b
    out[..., -1] += 0.5 * symplectic(a, b)
    return out


def inverse(a) -> np.ndarray:
    return -as_point(a)


def dilate(a, lam: float) -> np.ndarray:
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam!r}")
    out = as_point(a) * lam
    out[..., -1] *= lam
    return out


def frame_at(q) -> np.ndarray:
    """Coordinates of X_1..X_{2n} at q, one row per field: shape (..., 2n, 2n+1)."""
    q = as_point(q)
    n = (q.shape[-1] - 1) // 2
    rows = np.zeros(q.shape[:-1] + (2 * n, 2 * n + 1))
    for j in range(n):
        rows[..., j, j] = 1.0
        rows[..., j, -1] = -0.5 * q[..., n + j]
        rows[..., n + j, n + j] = 1.0
        rows[..., n + j, -1] = 0.5 * q[..., j]
    return rows


def horizontal_velocity(q, h) -> np.ndarray:
    """Tangent vector sum_j h_j X_j(q) in coordinates."""
    h = np.asarray(h, dtype=float)
    return np.einsum("...j,...jk->...k", h, frame_at(q))


def horizontal_norm(h) -> np.ndarray:
    return np.linalg.norm(np.asarray(h, dtype=float), axis=-1)


def horizontal_step(q, j: int, t: float) -> np.ndarray:
    """Time-t flow of the frame field X_j (0-based) from q, i.e. q . (t e_j)."""
    q = as_point(q)
    step = np.zeros(q.shape[-1])
    step[j] = t
    return compose(q, step)


def is_vertical(a, atol: float = 0.0) -> np.ndarray:
    """True where the horizontal part vanishes, i.e. the point lies on the center L."""
    a = as_point(a)
    return np.all(np.abs(a[..., :-1]) <= atol, axis=-1)
