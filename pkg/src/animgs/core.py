"""Static Gaussian primitives: quaternions, covariances and point opacity.

Quaternions are stored scalar-first ``(w, x, y, z)`` and normalized on read.
Scales live in log space and opacities as logits, so every stored parameter is
unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGaussianError, InvalidParameterError

SCALE_EPS = 1e-7


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, 1e-30)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions; input need not be unit length."""
    w, x, y, z = np.moveaxis(normalize_quat(q), -1, 0)
    R = np.empty(w.shape + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Pull a gradient on R back to the raw (unnormalized) quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    g = grad_R
    gw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    gx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0]
              - 2 * x * g[..., 1, 1] - w * g[..., 1, 2] + z * g[..., 2, 0]
              + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    gy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2] - w * g[..., 2, 0]
              + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    gz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
              + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    gn = np.stack([gw, gx, gy, gz], axis=-1)
    qn = q / norm
    # d(q/|q|)/dq = (I - qn qn^T) / |q|
    return (gn - qn * np.sum(gn * qn, axis=-1, keepdims=True)) / norm


def covariance_from_linear(M: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """``M diag(exp(2s)) M^T`` for batched linear maps ``M`` (..., 3, 3)."""
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return np.einsum("...ij,...j,...kj->...ik", M, s2, M)


@dataclass(frozen=True)
class Covariance3:
    """Symmetric 3x3 covariance stored as its upper triangle
    ``(xx, xy, xz, yy, yz, zz)``."""

    upper: tuple

    @classmethod
    def from_matrix(cls, m) -> "Covariance3":
        m = np.asarray(m, dtype=np.float64)
        m = 0.5 * (m + m.T)
        return cls((m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2]))

    def matrix(self) -> np.ndarray:
        a, b, c, d, e, f = self.upper
        return np.array([[a, b, c], [b, d, e], [c, e, f]], dtype=np.float64)


@dataclass(frozen=True)
class GaussianGeometry:
    center: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    log_scale: np.ndarray = field(default_factory=lambda: np.zeros(3))
    opacity_logit: float = 0.0

    def __post_init__(self):
        for name in ("center", "rotation", "log_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "rotation", normalize_quat(self.rotation))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def covariance(self) -> Covariance3:
        return build_covariance(self.rotation, self.log_scale)


@dataclass(frozen=True)
class SkinnedGaussian:
    """One skinned Gaussian with the values sampled from the parameter fields."""

    geometry: GaussianGeometry
    skin: tuple  # ((bone, weight), ...), at most 4 entries
    sh: np.ndarray = field(default_factory=lambda: np.zeros((9, 3)))
    displacement: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ao: float = 1.0

    def __post_init__(self):
        if len(self.skin) > 4:
            raise InvalidParameterError("at most 4 skin influences per Gaussian")
        w = np.array([wt for _, wt in self.skin], dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise InvalidParameterError(f"skin weights must be non-negative and sum to 1, got {w}")
        if not 0.0 <= self.ao <= 1.0:
            raise InvalidParameterError(f"ao must lie in [0, 1], got {self.ao}")


def build_covariance(q, log_scale) -> Covariance3:
    q = np.asarray(q, dtype=np.float64)
    log_scale = np.asarray(log_scale, dtype=np.float64)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(log_scale))):
        raise InvalidParameterError("quaternion and log-scale must be finite")
    if np.linalg.norm(q) == 0:
        raise InvalidParameterError("zero quaternion")
    R = quat_to_rotmat(q)
    return Covariance3.from_matrix(covariance_from_linear(R, log_scale))


def gaussian_opacity_at(g: GaussianGeometry, x) -> float:
    """Opacity contributed by ``g`` at point ``x``: ``a0 exp(-d^2/2)``."""
    if np.any(g.scale <= SCALE_EPS):
        raise DegenerateGaussianError(f"scale {g.scale} below {SCALE_EPS}")
    # Sigma^-1 = R diag(exp(-2s)) R^T, avoids inverting an ill-conditioned product
    R = quat_to_rotmat(g.rotation)
    d = R.T @ (np.asarray(x, dtype=np.float64) - g.center)
    m = float(np.sum(d * d * np.exp(-2.0 * g.log_scale)))
    return g.opacity * float(np.exp(-0.5 * m))
