"""Registration-compensated spectral-ratio Fried parameter estimation.

Pipeline: (optionally) register frames, average them into a long
exposure, divide its magnitude spectrum by the mean short-exposure
magnitude spectrum, take a radial median, fit a Gaussian and invert the
Gaussian width for r0 using the tilt correction factor implied by the
registration.

All 2D spectra here are FFT-centred (``fftshift``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.signal import windows

from ._parallel import parallel_map
from .errors import ConfigError, DataError, FitError
from .regmodel import RegistrationSpec, registration_alpha
from .stats import OpticalConfig

DEFAULT_BAND = (0.02, 0.35)
DEFAULT_TAPER = 0.25


@dataclass
class ImageSequence:
    """K frames of linear-intensity grayscale data, shape (K, H, W)."""

    frames: np.ndarray
    cfg: OpticalConfig | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=float)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3:
            raise DataError("frames must be a (K, H, W) array")
        if not np.all(np.isfinite(f)):
            raise DataError("frames contain non-finite values")
        self.frames = f

    @property
    def K(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    @property
    def pixel_pitch(self):
        return None if self.cfg is None else self.cfg.pixel_pitch

    def __len__(self):
        return self.K

    def window(self, start, length):
        return ImageSequence(self.frames[start:start + length], self.cfg, dict(self.metadata))


def tukey_window_2d(H: int, W: int, taper: float = DEFAULT_TAPER):
    """Separable Tukey window; ``taper`` 0 is rectangular, 1 is Hann."""
    if not 0.0 <= taper <= 1.0:
        raise ConfigError("taper fraction must be in [0, 1]")
    return np.outer(windows.tukey(H, taper), windows.tukey(W, taper))


def _frames(seq):
    return seq.frames if isinstance(seq, ImageSequence) else np.asarray(seq, dtype=float)


def _spectrum(img, window, power):
    s = np.abs(np.fft.fftshift(np.fft.fft2(window * img)))
    return s * s if power else s


def mean_short_exposure_spectrum(seq, window=None, power=False, threads=None):
    """Average of per-frame magnitude (or power) spectra, FFT-centred."""
    frames = _frames(seq)
    if frames.shape[0] < 1:
        raise DataError("need at least one frame")
    if window is None:
        window = np.ones(frames.shape[1:])
    if not np.any(frames):
        raise DataError("all frames are zero; spectrum is degenerate")
    specs = parallel_map(lambda f: _spectrum(f, window, power), list(frames), threads)
    total = np.zeros(frames.shape[1:])
    for s in specs:
        total += s
    return total / len(specs)


def register_for_estimation(seq, registration: RegistrationSpec, threads=None):
    """Frames registered as requested (reference: the raw frame average)."""
    from .mitigation import MitigationConfig, register_sequence
    frames = _frames(seq)
    if registration.kind == "none":
        return frames
    mcfg = MitigationConfig(M=max(registration.M, 1), S=registration.S,
                            registration=registration.kind)
    registered, _, _ = register_sequence(frames, mcfg, threads=threads)
    return registered


def long_exposure_spectrum(seq, registration: RegistrationSpec | None = None, window=None,
                           power=False, threads=None):
    """Magnitude spectrum of the (registered) frame average, FFT-centred."""
    registration = registration or RegistrationSpec()
    frames = register_for_estimation(seq, registration, threads)
    if window is None:
        window = np.ones(frames.shape[1:])
    return _spectrum(frames.mean(axis=0), window, power)


def spectral_ratio(long_spec, short_spec, floor=1e-9, clamp=1.5):
    """Elementwise long/short; NaN where the short spectrum is below ``floor * DC``."""
    long_spec = np.asarray(long_spec, dtype=float)
    short_spec = np.asarray(short_spec, dtype=float)
    if long_spec.shape != short_spec.shape:
        raise DataError("spectra differ in shape")
    H, W = short_spec.shape
    dc = short_spec[H // 2, W // 2]
    if not dc > 0:
        raise DataError("short-exposure spectrum has no DC energy")
    valid = short_spec >= floor * dc
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(valid, long_spec / np.where(valid, short_spec, 1.0), np.nan)
    ratio = np.where(ratio <= 0, np.nan, ratio)
    return np.minimum(ratio, clamp)


def centred_frequency(shape):
    """Radial frequency in cycles/pixel on an FFT-centred grid."""
    H, W = shape
    fy = (np.arange(H) - H // 2) / H
    fx = (np.arange(W) - W // 2) / W
    return np.hypot(fx[None, :], fy[:, None])


@dataclass
class RadialProfile:
    frequency: np.ndarray  # cycles / pixel
    values: np.ndarray
    counts: np.ndarray
    pixel_pitch: float | None = None

    @property
    def rho(self):
        """Frequency in cycles / metre in the focal plane."""
        if self.pixel_pitch is None:
            raise ConfigError("profile has no pixel pitch")
        return self.frequency / self.pixel_pitch


def radial_median_profile(ratio, pixel_pitch=None, min_count=8) -> RadialProfile:
    """Median over all angles of each 1-pixel-wide annulus of an FFT-centred array."""
    ratio = np.asarray(ratio, dtype=float)
    H, W = ratio.shape
    n = max(H, W)
    rad = centred_frequency((H, W)).ravel()
    v = ratio.ravel()
    ok = np.isfinite(v)
    rad, v = rad[ok], v[ok]
    b = np.rint(rad * n).astype(int)

    def bin_median(x):
        xs = x[np.lexsort((x, b))]
        return (xs[start + (counts - 1) // 2] + xs[start + counts // 2]) / 2.0

    bins, start, counts = np.unique(np.sort(b), return_index=True, return_counts=True)
    med = bin_median(v)
    # the median radius of the annulus, so a monotone profile maps back exactly
    freq = bin_median(rad)
    keep = counts >= min_count
    return RadialProfile(freq[keep], med[keep], counts[keep], pixel_pitch)


def fit_gaussian_sigma(profile: RadialProfile, band=DEFAULT_BAND, min_bins=5):
    """Fit ``exp(-f^2 / (2 s^2))`` over ``band`` (cycles/pixel).

    Returns ``(sigma_cycles_per_pixel, residual_rms)``.  The fit is
    nonlinear least squares on the linear ratio, started from a
    log-domain regression through the origin.
    """
    f = np.asarray(profile.frequency, dtype=float)
    v = np.asarray(profile.values, dtype=float)
    sel = (f >= band[0]) & (f <= band[1]) & np.isfinite(v) & (v > 0)
    if sel.sum() < min_bins:
        raise FitError(f"only {int(sel.sum())} usable bins in band {band}")
    f, v = f[sel], v[sel]
    x = f * f
    y = -np.log(v)
    slope = float(np.sum(x * y) / np.sum(x * x))
    if not slope > 0:
        raise FitError("spectral ratio does not decay over the fit band")
    s0 = math.sqrt(1.0 / (2.0 * slope))

    def resid(p):
        return np.exp(-x / (2.0 * math.exp(2 * p[0]))) - v

    sol = optimize.least_squares(resid, [math.log(s0)], method="lm", xtol=1e-14, ftol=1e-14)
    sigma = math.exp(sol.x[0])
    if not np.isfinite(sigma) or math.exp(-f[-1] ** 2 / (2 * sigma ** 2)) > 0.995:
        raise FitError("fitted Gaussian is flat across the band (non-decaying profile)")
    rms = float(np.sqrt(np.mean(resid(sol.x) ** 2)))
    return sigma, rms


def r0_from_sigma(sigma_G: float, alpha: float, cfg: OpticalConfig) -> float:
    """Invert the residual-tilt Gaussian width (cycles/m) for r0 (m)."""
    if alpha >= 1:
        raise ConfigError("alpha must be < 1 to invert for r0")
    if not sigma_G > 0:
        raise ConfigError("sigma_G must be > 0")
    lam_l = cfg.wavelength * cfg.focal_length
    return (6.88 * (lam_l * sigma_G) ** 2 * (1.0 - alpha)
            / cfg.aperture_diameter ** (1.0 / 3.0)) ** (3.0 / 5.0)


@dataclass
class SpectralRatioResult:
    ratio: np.ndarray
    profile: RadialProfile
    sigma_G: float
    alpha: float
    r0: float
    band: tuple
    fit_rms: float

    def summary(self):
        return {"r0_m": self.r0, "sigmaG": self.sigma_G, "alpha": self.alpha,
                "fit_rms": self.fit_rms, "band": list(self.band)}


def _noise_floor(spec, cutoff_cpp):
    f = centred_frequency(spec.shape)
    beyond = f > cutoff_cpp * 1.02
    if beyond.sum() < 16:
        raise DataError("no frequencies beyond the optical cut-off to estimate a noise floor")
    return float(np.median(spec[beyond]))


def estimate_r0(seq: ImageSequence, registration: RegistrationSpec | None = None,
                band=DEFAULT_BAND, taper=DEFAULT_TAPER, power=False, noise_floor=False,
                alpha=None, cfg=None, threads=None) -> SpectralRatioResult:
    """Spectral-ratio r0 estimate for one sequence.

    ``alpha`` overrides the registration-implied tilt correction factor
    (none: 0, bma: patch alpha for M and epsilon, global: average of the
    global alpha map for the frame size).
    """
    registration = registration or RegistrationSpec()
    cfg = cfg or seq.cfg
    if cfg is None:
        raise ConfigError("optical configuration required")
    frames = _frames(seq)
    if frames.shape[0] < 2:
        raise DataError("need K >= 2 frames")
    H, W = frames.shape[1:]
    win = tukey_window_2d(H, W, taper)
    short = mean_short_exposure_spectrum(frames, win, power, threads)
    long_ = long_exposure_spectrum(frames, registration, win, power, threads)
    if noise_floor:
        c = cfg.cutoff_cycles_per_pixel
        tiny = 1e-12 * short.max()
        short = np.maximum(short - _noise_floor(short, c), tiny)
        long_ = np.maximum(long_ - _noise_floor(long_, c), tiny)
    if power:
        short, long_ = np.sqrt(short), np.sqrt(long_)
    ratio = spectral_ratio(long_, short)
    profile = radial_median_profile(ratio, cfg.pixel_pitch)
    sigma_cpp, rms = fit_gaussian_sigma(profile, band)
    sigma_G = sigma_cpp / cfg.pixel_pitch
    if alpha is None:
        alpha = registration_alpha(cfg, registration, (H, W))
    r0 = r0_from_sigma(sigma_G, alpha, cfg)
    return SpectralRatioResult(ratio, profile, sigma_G, float(alpha), r0, tuple(band), rms)


def estimate_r0_windows(seq: ImageSequence, length: int, stride: int, **kwargs):
    """Moving-window estimates: list of ``(start_frame, SpectralRatioResult)``."""
    if length < 2 or stride < 1:
        raise ConfigError("window length must be >= 2 and stride >= 1")
    out = []
    for start in range(0, seq.K - length + 1, stride):
        out.append((start, estimate_r0(seq.window(start, length), **kwargs)))
    return out
