"""Image quality metrics (PSNR, SSIM)."""

import math

import numpy as np
from scipy import ndimage

from .errors import DataError


def psnr(a, b, peak=255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError("PSNR inputs differ in shape")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def ssim(a, b, data_range=255.0, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Mean structural similarity with an 11-tap Gaussian window (sigma 1.5).

    Local statistics use reflected borders; a window radius is cropped
    from each side before averaging.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError("SSIM inputs differ in shape")
    truncate = 3.5
    radius = int(truncate * sigma + 0.5)
    if min(a.shape) <= 2 * radius:
        raise DataError("image too small for the SSIM window")

    def blur(x):
        return ndimage.gaussian_filter(x, sigma, truncate=truncate, mode="reflect")

    ma, mb = blur(a), blur(b)
    vaa = blur(a * a) - ma * ma
    vbb = blur(b * b) - mb * mb
    vab = blur(a * b) - ma * mb
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2))
    crop = s[radius:-radius, radius:-radius]
    return float(crop.mean())
