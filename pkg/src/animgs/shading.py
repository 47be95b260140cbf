"""Degree-2 real spherical harmonics and ambient-occlusion modulation.

Coefficients are laid out ``(9, 3)``: basis index first, RGB second. The
decoded color is ``max(0, 0.5 + sum_m c_m Y_m(d))`` and AO scales the decoded
color, so ``ao = 0`` is black regardless of the offset.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidDirectionError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
N_COEFFS = 9
COLOR_OFFSET = 0.5


def sh_basis(d: np.ndarray) -> np.ndarray:
    """Basis values (..., 9) at unit directions (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, C0),
        -C1 * y, C1 * z, -C1 * x,
        C2[0] * x * y, C2[1] * y * z, C2[2] * (2 * z * z - x * x - y * y),
        C2[3] * x * z, C2[4] * (x * x - y * y),
    ], axis=-1)


def sh_basis_jacobian(d: np.ndarray) -> np.ndarray:
    """d(basis)/d(direction), shape (..., 9, 3)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    J = np.zeros(d.shape[:-1] + (9, 3))
    J[..., 1, 1] = -C1
    J[..., 2, 2] = C1
    J[..., 3, 0] = -C1
    J[..., 4, 0], J[..., 4, 1] = C2[0] * y, C2[0] * x
    J[..., 5, 1], J[..., 5, 2] = C2[1] * z, C2[1] * y
    J[..., 6, 0], J[..., 6, 1], J[..., 6, 2] = -2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z
    J[..., 7, 0], J[..., 7, 2] = C2[3] * z, C2[3] * x
    J[..., 8, 0], J[..., 8, 1] = 2 * C2[4] * x, -2 * C2[4] * y
    return J


def eval_sh(coeffs, d_c) -> np.ndarray:
    """Decoded RGB for (..., 9, 3) coefficients viewed along (..., 3)."""
    d_c = np.asarray(d_c, dtype=np.float64)
    n = np.linalg.norm(d_c, axis=-1)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise InvalidDirectionError("view direction must be finite and non-zero")
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise InvalidDirectionError(f"view direction must be unit length, got norm {n}")
    raw = COLOR_OFFSET + np.einsum("...m,...mc->...c", sh_basis(d_c), np.asarray(coeffs, dtype=np.float64))
    return np.maximum(raw, 0.0)


def apply_ao(ao, rgb) -> np.ndarray:
    return np.asarray(ao, dtype=np.float64)[..., None] * np.asarray(rgb, dtype=np.float64)


def shade(sh: np.ndarray, d_c: np.ndarray, ao: np.ndarray):
    """Batched color ``ao * eval_sh(sh, d_c)`` plus what the backward pass needs."""
    basis = sh_basis(d_c)
    raw = COLOR_OFFSET + np.einsum("nm,nmc->nc", basis, sh)
    rgb = np.maximum(raw, 0.0)
    color = ao[:, None] * rgb
    return color, (basis, raw, rgb)


def shade_backward(sh, d_c, ao, cache, g_color):
    """Returns (g_sh, g_dc, g_ao)."""
    basis, raw, rgb = cache
    g_ao = np.sum(g_color * rgb, axis=1)
    g_raw = ao[:, None] * g_color * (raw > 0)
    g_sh = basis[:, :, None] * g_raw[:, None, :]
    g_basis = np.einsum("nmc,nc->nm", sh, g_raw)
    g_dc = np.einsum("nm,nmk->nk", g_basis, sh_basis_jacobian(d_c))
    return g_sh, g_dc, g_ao
