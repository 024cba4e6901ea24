"""PSNR and SSIM."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..errors import ShapeMismatch

PSNR_CAP = 99.0
K1, K2 = 0.01, 0.03
WIN = 8
WIN_SIGMA = 1.5


def _peak(x_star):
    p = float(np.max(np.abs(x_star)))
    return p if p > 0 else 1.0


def psnr(x_hat, x_star, peak=None):
    """10 log10(peak^2 / MSE), peak = max(x_star); capped at 99 dB."""
    x_hat, x_star = np.asarray(x_hat), np.asarray(x_star)
    if x_hat.shape != x_star.shape:
        raise ShapeMismatch(f"psnr: {x_hat.shape} vs {x_star.shape}")
    peak = _peak(x_star) if peak is None else float(peak)
    mse = float(np.mean(np.abs(x_hat - x_star) ** 2))
    if mse < 1e-12 * peak ** 2:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(peak ** 2 / mse))


def _window():
    r = np.arange(WIN) - (WIN - 1) / 2
    w = np.exp(-r ** 2 / (2 * WIN_SIGMA ** 2))
    w /= w.sum()
    return np.outer(w, w)


def _filt(img, k):
    # 'valid' correlation: only windows lying fully inside the image
    return ndimage.correlate(img, k, mode="constant")[_valid(img.shape)]


def _valid(shape):
    lo = WIN // 2
    hi = WIN - 1 - lo
    return (slice(lo, shape[0] - hi), slice(lo, shape[1] - hi))


def _ssim2d(a, b, L):
    k = _window()
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    mu_a, mu_b = _filt(a, k), _filt(b, k)
    saa = _filt(a * a, k) - mu_a ** 2
    sbb = _filt(b * b, k) - mu_b ** 2
    sab = _filt(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(x_hat, x_star, data_range=None):
    """Single-scale SSIM with an 8x8 Gaussian window (sigma 1.5), averaged over planes.

    Dynamic range defaults to max(x_star); complex fields are compared by magnitude.
    """
    x_hat, x_star = np.asarray(x_hat), np.asarray(x_star)
    if x_hat.shape != x_star.shape:
        raise ShapeMismatch(f"ssim: {x_hat.shape} vs {x_star.shape}")
    if np.iscomplexobj(x_hat) or np.iscomplexobj(x_star):
        x_hat, x_star = np.abs(x_hat), np.abs(x_star)
    if x_star.ndim == 1:
        x_hat, x_star = x_hat[:, None], x_star[:, None]
    if x_star.shape[0] < WIN or x_star.shape[1] < WIN:
        raise ShapeMismatch(f"ssim needs at least {WIN}x{WIN} planes")
    L = float(data_range) if data_range is not None else float(x_star.max())
    if L <= 0:
        L = float(x_star.max() - x_star.min()) or 1.0
    a = x_hat.reshape(x_hat.shape[:2] + (-1,))
    b = x_star.reshape(x_star.shape[:2] + (-1,))
    return float(np.mean([_ssim2d(a[..., k].astype(float), b[..., k].astype(float), L)
                          for k in range(a.shape[2])]))
