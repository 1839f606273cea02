"""Degradation OTF model parameterized by optics, r0 and the tilt correction factor.

Radial frequency ``rho`` is in cycles per metre in the focal plane; use
``rho = f / pixel_pitch`` to convert from cycles per pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AliasingError, ConfigError
from .stats import OpticalConfig

_LE_COEF = 3.44


def _rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ConfigError("radial frequency must be >= 0")
    return rho


def otf_diffraction(rho, cfg: OpticalConfig):
    """Circular-pupil diffraction OTF; zero at and beyond the cut-off."""
    rho = _rho(rho)
    s = np.minimum(rho / cfg.cutoff_frequency, 1.0)
    h = (2.0 / np.pi) * (np.arccos(s) - s * np.sqrt(1.0 - s * s))
    return np.where(rho >= cfg.cutoff_frequency, 0.0, h)


def _check_r0(r0):
    if not (np.isfinite(r0) and r0 > 0) and r0 != np.inf:
        raise ConfigError(f"r0 must be > 0, got {r0}")


def otf_short_exposure(rho, cfg: OpticalConfig, r0: float):
    """Near-field average short-exposure (tilt-removed) atmospheric OTF."""
    _check_r0(r0)
    rho = _rho(rho)
    x = cfg.wavelength * cfg.focal_length * rho
    bracket = np.maximum(1.0 - (x / cfg.aperture_diameter) ** (1.0 / 3.0), 0.0)
    return np.exp(-_LE_COEF * (x / r0) ** (5.0 / 3.0) * bracket)


def otf_long_exposure(rho, cfg: OpticalConfig, r0: float):
    _check_r0(r0)
    rho = _rho(rho)
    x = cfg.wavelength * cfg.focal_length * rho
    return np.exp(-_LE_COEF * (x / r0) ** (5.0 / 3.0))


def sigma_G2(cfg: OpticalConfig, r0: float, alpha: float) -> float:
    """Variance (cycles^2/m^2) of the residual-tilt Gaussian OTF; inf when alpha == 1."""
    if alpha > 1:
        raise ConfigError(f"alpha must be <= 1, got {alpha}")
    if alpha == 1:
        return math.inf
    lam_l = cfg.wavelength * cfg.focal_length
    return r0 ** (5.0 / 3.0) * cfg.aperture_diameter ** (1.0 / 3.0) / (
        2.0 * _LE_COEF * (1.0 - alpha) * lam_l ** 2)


def sigma_g2(cfg: OpticalConfig, r0: float, alpha: float) -> float:
    """Spatial variance (m^2) of the matching focal-plane Gaussian blur."""
    return 1.0 / (4.0 * math.pi ** 2 * sigma_G2(cfg, r0, alpha))


def gaussian_tilt_otf(rho, cfg: OpticalConfig, r0: float, alpha: float):
    """Blur from averaging frames with residual tilt; identically 1 when alpha == 1."""
    _check_r0(r0)
    rho = _rho(rho)
    s2 = sigma_G2(cfg, r0, alpha)
    if math.isinf(s2):
        return np.ones_like(rho)
    return np.exp(-rho ** 2 / (2.0 * s2))


def otf_combined(rho, cfg: OpticalConfig, r0: float, alpha: float):
    return (otf_diffraction(rho, cfg) * otf_short_exposure(rho, cfg, r0)
            * gaussian_tilt_otf(rho, cfg, r0, alpha))


def wiener_transfer(H, gamma: float):
    """``conj(H) / (|H|^2 + gamma)``; for gamma == 0 the pseudo-inverse (0 where H == 0)."""
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    H = np.asarray(H)
    den = np.abs(H) ** 2 + gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.conj(H) / den
    if gamma == 0:
        out = np.where(den == 0, 0.0, out)
    return out


def frequency_grid(shape, pixel_pitch: float):
    """Radial frequency (cycles/m) on the unshifted 2D FFT grid of ``shape``."""
    H, W = shape
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    return np.hypot(fx, fy) / pixel_pitch


@dataclass(frozen=True)
class OtfModel:
    cfg: OpticalConfig
    r0: float
    alpha: float = 0.0

    def __post_init__(self):
        _check_r0(self.r0)
        if self.alpha > 1:
            raise ConfigError("alpha must be <= 1")

    @property
    def cutoff(self):
        return self.cfg.cutoff_frequency

    @property
    def sigma_G2(self):
        return sigma_G2(self.cfg, self.r0, self.alpha)

    @property
    def sigma_g2(self):
        return sigma_g2(self.cfg, self.r0, self.alpha)

    def __call__(self, rho):
        return otf_combined(rho, self.cfg, self.r0, self.alpha)

    def sample(self, shape, pixel_pitch=None):
        """OTF on the unshifted FFT grid of an image of ``shape``."""
        pitch = self.cfg.pixel_pitch if pixel_pitch is None else pixel_pitch
        return self(frequency_grid(shape, pitch))


def otf_grid(cfg, r0, alpha, shape, pixel_pitch=None, components="all"):
    """Sample the OTF (or the ``dif*se`` part only) on an FFT grid."""
    pitch = cfg.pixel_pitch if pixel_pitch is None else pixel_pitch
    rho = frequency_grid(shape, pitch)
    if components == "dif*se":
        return otf_diffraction(rho, cfg) * otf_short_exposure(rho, cfg, r0)
    return otf_combined(rho, cfg, r0, alpha)


def psf_spatial(cfg: OpticalConfig, r0: float, alpha: float, size, pixel_pitch=None):
    """Centred PSF on a ``size`` grid (int or (H, W)), normalized to unit sum.

    Raises :class:`AliasingError` when the grid's Nyquist frequency is more than 0.1% below
    the optical cut-off.
    """
    shape = (size, size) if np.isscalar(size) else tuple(size)
    pitch = cfg.pixel_pitch if pixel_pitch is None else pixel_pitch
    nyquist = 0.5 / pitch
    # 0.1% slack: the default optics sit at Nyquist to within 1e-4
    if nyquist < cfg.cutoff_frequency * (1 - 1e-3):
        raise AliasingError(
            f"pixel pitch {pitch:g} m undersamples cut-off {cfg.cutoff_frequency:g} cyc/m")
    H = otf_grid(cfg, r0, alpha, shape, pitch)
    psf = np.real(np.fft.ifft2(H))
    psf = np.fft.fftshift(psf)
    return psf / psf.sum()


def psf_to_otf(psf):
    """Inverse of :func:`psf_spatial` (returns the unshifted FFT-grid OTF)."""
    return np.fft.fft2(np.fft.ifftshift(psf))


def psf_second_moment(psf, pixel_pitch=1.0):
    """Radial second moment sum(r^2 psf) / sum(psf) in pitch units^2."""
    H, W = psf.shape
    y = (np.arange(H) - H // 2)[:, None] * pixel_pitch
    x = (np.arange(W) - W // 2)[None, :] * pixel_pitch
    return float(np.sum((x * x + y * y) * psf) / np.sum(psf))
