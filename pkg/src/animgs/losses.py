"""Image losses and metrics with analytic gradients.

Images are (H, W, 3) float arrays in linear [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidParameterError

PSNR_CAP = 99.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidParameterError(f"lambda must lie in [0, 1], got {self.lam}")


def _check(img, gt):
    img = np.asarray(img, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if img.shape != gt.shape:
        raise InvalidParameterError(f"image shapes differ: {img.shape} vs {gt.shape}")
    return img, gt


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x, g):
    # zero-padded 'same' filtering over the two spatial axes; self-adjoint for symmetric g
    return correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")


def l1_loss(img, gt, grad: bool = False):
    img, gt = _check(img, gt)
    diff = img - gt
    val = float(np.mean(np.abs(diff)))
    if grad:
        return val, np.sign(diff) / diff.size
    return val


def ssim(img, gt, window: int = 11, sigma: float = 1.5, grad: bool = False):
    """Mean SSIM over pixels and channels; optionally d(SSIM)/d(img)."""
    x, y = _check(img, gt)
    g = gaussian_window(window, sigma)
    mx, my = _blur(x, g), _blur(y, g)
    exx, eyy, exy = _blur(x * x, g), _blur(y * y, g), _blur(x * y, g)
    sxx, syy, sxy = exx - mx * mx, eyy - my * my, exy - mx * my
    A1, A2 = 2 * mx * my + SSIM_C1, 2 * sxy + SSIM_C2
    B1, B2 = mx * mx + my * my + SSIM_C1, sxx + syy + SSIM_C2
    smap = A1 * A2 / (B1 * B2)
    val = float(smap.mean())
    if not grad:
        return val
    w = 1.0 / smap.size
    d_mx = w * ((2 * my * A2 - 2 * my * A1) / (B1 * B2) - smap * (2 * mx / B1 - 2 * mx / B2))
    d_exx = w * (-smap / B2)
    d_exy = w * (2 * A1 / (B1 * B2))
    g_img = _blur(d_mx, g) + 2 * x * _blur(d_exx, g) + y * _blur(d_exy, g)
    return val, g_img


def dssim_loss(img, gt, window: int = 11, sigma: float = 1.5, grad: bool = False):
    if not grad:
        return (1.0 - ssim(img, gt, window, sigma)) / 2.0
    s, g = ssim(img, gt, window, sigma, grad=True)
    return (1.0 - s) / 2.0, -0.5 * g


def total_loss(img, gt, cfg: LossConfig = LossConfig(), grad: bool = False):
    """``(1 - lam) * L1 + lam * D-SSIM``."""
    if not grad:
        return (1 - cfg.lam) * l1_loss(img, gt) + cfg.lam * dssim_loss(img, gt, cfg.window, cfg.sigma)
    l1, g1 = l1_loss(img, gt, grad=True)
    ds, g2 = dssim_loss(img, gt, cfg.window, cfg.sigma, grad=True)
    return (1 - cfg.lam) * l1 + cfg.lam * ds, (1 - cfg.lam) * g1 + cfg.lam * g2


def psnr(img, gt) -> float:
    img, gt = _check(img, gt)
    mse = float(np.mean((img - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
