"""PSNR and SSIM on single-channel (luminance) planes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _plane(a) -> np.ndarray:
    samples = getattr(a, "samples", a)
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"expected a single-channel plane, got shape {arr.shape}")
    return arr


def psnr(a, b, peak: float = 255.0, crop: int = 0) -> float:
    """10*log10(peak^2 / MSE) with ``crop`` pixels dropped per border; inf when identical."""
    x, y = _plane(a), _plane(b)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    if crop:
        if 2 * crop >= min(x.shape):
            raise ParameterError(f"crop {crop} leaves no pixels in a {x.shape} plane")
        x = x[crop:-crop, crop:-crop]
        y = y[crop:-crop, crop:-crop]
    d = x - y
    mse = float((d * d).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_map(a, b, peak: float = 255.0) -> np.ndarray:
    x, y = _plane(a), _plane(b)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ParameterError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5)."""
    return float(ssim_map(a, b, peak).mean())


@dataclass(frozen=True)
class QualityScore:
    psnr_db: float
    ssim: float
    n_pixels: int
    border_crop: int

    def __str__(self):
        return f"{self.psnr_db:.2f}/{self.ssim:.4f}"


def quality(a, b, peak: float = 255.0, crop: int = 0) -> QualityScore:
    """PSNR and SSIM over the same border-cropped region."""
    x, y = _plane(a), _plane(b)
    if crop:
        x, y = x[crop:-crop, crop:-crop], y[crop:-crop, crop:-crop]
    return QualityScore(psnr(x, y, peak), ssim(x, y, peak), x.size, crop)
