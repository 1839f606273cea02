"""Registration as linear filtering of random tilt fields.

Patch registration estimates the box-averaged tilt over a (2M+1)^2 patch;
what it leaves behind is the tilt field filtered by ``delta - box``.
Filtered-field variances are computed as ``sum_n w(n) r(n)`` with
``w = h (*) h`` the filter autocorrelation, which turns the O(M^4)
double sum into an O(M^2) weighted sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal

from .corr2d import TiltAutocorr2D, build_autocorr_grid
from .errors import ConfigError, OutOfRangeError, ZeroTurbulenceError
from .stats import Cn2Profile, OpticalConfig

REGISTRATION_KINDS = ("none", "bma", "global")


@dataclass(frozen=True)
class RegistrationSpec:
    """How frames are registered before averaging.

    ``epsilon`` is the error-to-signal ratio sigma_e^2 / sigma_T^2.
    ``M`` is the BMA patch half width and ``S`` its search radius;
    ``image_half_extent`` is used by the global kind (``None`` means
    "derive from the frame size").
    """

    kind: str = "none"
    M: int = 0
    epsilon: float = 0.0
    image_half_extent: int | tuple | None = None
    S: int = 8

    def __post_init__(self):
        if self.kind not in REGISTRATION_KINDS:
            raise ConfigError(f"registration kind must be one of {REGISTRATION_KINDS}")
        if int(self.M) != self.M or self.M < 0:
            raise ConfigError("M must be a non-negative integer")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ConfigError("epsilon must be finite and >= 0")
        if self.kind == "bma" and self.M < 1:
            raise ConfigError("BMA registration needs M >= 1")


@dataclass
class TiltFilter:
    """LSI (or per-pixel) filter taps centred at ``[H2, H1]``."""

    taps: np.ndarray
    kind: str = "custom"
    M: int | None = None
    offset: tuple = (0, 0)

    @property
    def half_widths(self):
        h2, h1 = (s // 2 for s in self.taps.shape)
        return h1, h2

    def apply(self, tilt_field):
        """Filter a tilt field (replicated borders)."""
        from scipy import ndimage
        return ndimage.convolve(np.asarray(tilt_field, dtype=float), self.taps, mode="nearest")


def _tri(M):
    n = np.arange(-2 * M, 2 * M + 1)
    return (2 * M + 1 - np.abs(n)) / (2 * M + 1) ** 2


def patch_filter(M: int) -> TiltFilter:
    if M < 0:
        raise ConfigError("M must be >= 0")
    n = 2 * M + 1
    return TiltFilter(np.full((n, n), 1.0 / n ** 2), kind="patch", M=M)


def residual_filter(M: int) -> TiltFilter:
    """Identity minus the (2M+1)^2 moving average."""
    h = -patch_filter(M).taps
    h[M, M] += 1.0
    return TiltFilter(h, kind="residual", M=M)


def global_residual_filter(k, M_img) -> TiltFilter:
    """Residual filter for pixel ``k = (k1, k2)`` under one global shift.

    ``M_img`` is the image half extent (int or ``(M1, M2)``).
    """
    M1, M2 = (M_img, M_img) if np.isscalar(M_img) else M_img
    k1, k2 = k
    if abs(k1) > M1 or abs(k2) > M2:
        raise OutOfRangeError(f"pixel {k} outside image half extent ({M1}, {M2})")
    n1, n2 = 2 * M1 + 1, 2 * M2 + 1
    h = np.full((n2, n1), -1.0 / (n1 * n2))
    h[M2 - k2, M1 - k1] += 1.0
    return TiltFilter(h, kind="global", M=M_img, offset=(k1, k2))


def filter_autocorrelation(h: TiltFilter) -> np.ndarray:
    """``w(n) = sum_k h(k) h(k + n)``, centred, half widths doubled."""
    if h.kind in ("patch", "residual") and h.M is not None:
        M = h.M
        t = _tri(M)
        w = np.outer(t, t)
        if h.kind == "residual":
            w[M:3 * M + 1, M:3 * M + 1] -= 2.0 / (2 * M + 1) ** 2
            w[2 * M, 2 * M] += 1.0
        return w
    taps = h.taps
    method = "direct" if taps.size <= 625 else "fft"
    return signal.correlate(taps, taps, mode="full", method=method)


def _lag_window(source, which, H1, H2):
    if isinstance(source, TiltAutocorr2D):
        N1, N2 = source.half_extent
        r = source.field(which)
    else:
        r = np.asarray(source, dtype=float)
        N2, N1 = (s // 2 for s in r.shape)
    if H1 > N1 or H2 > N2:
        raise OutOfRangeError(
            f"correlation grid +/-({N1}, {N2}) too small; filter needs +/-({H1}, {H2})")
    return r[N2 - H2:N2 + H2 + 1, N1 - H1:N1 + H1 + 1]


def filtered_variance(source, h: TiltFilter, sigma_e2: float = 0.0, which: str = "xx") -> float:
    """Variance of the filtered tilt field plus white measurement error (px^2).

    ``source`` is a :class:`TiltAutocorr2D` (``which`` picks ``xx``,
    ``yy`` or ``t/2``) or a centred 2D lag array.
    """
    w = filter_autocorrelation(h)
    H2, H1 = (s // 2 for s in w.shape)
    r = _lag_window(source, which, H1, H2)
    return float(sigma_e2 + np.sum(w * r))


def _sigma_t2(grid: TiltAutocorr2D, which="xx"):
    s0 = float(grid.field(which)[grid.half_extent[1], grid.half_extent[0]])
    if s0 <= 0:
        raise ZeroTurbulenceError("tilt variance is zero; tilt correction factor undefined")
    return s0


def _grid_for(cfg, profile, N, grid):
    if grid is not None:
        return grid
    return build_autocorr_grid(cfg, profile, N)


def patch_tilt_variance(cfg, profile, M, sigma_e2=0.0, grid=None, which="xx") -> float:
    grid = _grid_for(cfg, profile, 2 * M, grid)
    return filtered_variance(grid, patch_filter(M), sigma_e2, which)


def residual_tilt_variance(cfg, profile, M, sigma_e2=0.0, grid=None, which="xx") -> float:
    grid = _grid_for(cfg, profile, 2 * M, grid)
    return filtered_variance(grid, residual_filter(M), sigma_e2, which)


def tilt_correction_factor(cfg, profile, M, epsilon=0.0, grid=None, which="xx") -> float:
    """alpha = 1 - sigma_R^2 / sigma_T^2 with sigma_e^2 = epsilon * sigma_T^2.

    Negative values are returned as-is (registration worse than none)
    with a warning.
    """
    grid = _grid_for(cfg, profile, 2 * M, grid)
    s0 = _sigma_t2(grid, which)
    sR = filtered_variance(grid, residual_filter(M), 0.0, which)
    alpha = 1.0 - epsilon - sR / s0
    if alpha < 0:
        warnings.warn(f"tilt correction factor is negative ({alpha:.4f}); "
                      "registration increases tilt variance", RuntimeWarning, stacklevel=2)
    return alpha


@dataclass
class AlphaMap:
    alpha_x: np.ndarray
    alpha_y: np.ndarray
    sigma_t2: float
    epsilon: float = 0.0
    half_extent: tuple = field(default=(0, 0))

    @property
    def average(self) -> float:
        return float((self.alpha_x.mean() + self.alpha_y.mean()) / 2.0)

    @property
    def peak(self) -> float:
        return float(max(self.alpha_x.max(), self.alpha_y.max()))


def _box_sums(r, M1, M2):
    """Sum of ``r`` over every (2M2+1, 2M1+1) window, via a summed-area table."""
    c = np.zeros((r.shape[0] + 1, r.shape[1] + 1))
    c[1:, 1:] = r.cumsum(0).cumsum(1)
    a, b = 2 * M2 + 1, 2 * M1 + 1
    return c[a:, b:] - c[:-a, b:] - c[a:, :-b] + c[:-a, :-b]


def global_alpha_from_grid(grid: TiltAutocorr2D, M_img, epsilon=0.0) -> AlphaMap:
    M1, M2 = (M_img, M_img) if np.isscalar(M_img) else M_img
    M1, M2 = int(M1), int(M2)
    s0 = _sigma_t2(grid)
    n = (2 * M1 + 1) * (2 * M2 + 1)
    wP = np.outer(_tri(M2), _tri(M1))
    maps = []
    for which in ("xx", "yy"):
        r = _lag_window(grid, which, 2 * M1, 2 * M2)
        sP = float(np.sum(wP * r))
        box = _box_sums(r, M1, M2) / n
        sR = epsilon * s0 + s0 - 2.0 * box + sP
        maps.append(1.0 - sR / s0)
    return AlphaMap(maps[0], maps[1], s0, epsilon, (M1, M2))


def global_alpha_map(cfg, profile, M_img, epsilon=0.0, grid=None) -> AlphaMap:
    """Per-pixel x / y tilt correction factors under global registration."""
    M1, M2 = (M_img, M_img) if np.isscalar(M_img) else M_img
    grid = _grid_for_rect(cfg, profile, 2 * M1, 2 * M2, grid)
    return global_alpha_from_grid(grid, (M1, M2), epsilon)


def _grid_for_rect(cfg, profile, N1, N2, grid):
    if grid is not None:
        return grid
    return build_autocorr_grid(cfg, profile, N1, N2)


@lru_cache(maxsize=32)
def _cached_global_average(cfg, M1, M2, epsilon):
    # alpha is independent of the level of a constant profile
    return global_alpha_map(cfg, Cn2Profile.constant(1e-15), (M1, M2), epsilon).average


@lru_cache(maxsize=64)
def _cached_patch_alpha(cfg, M, epsilon):
    return tilt_correction_factor(cfg, Cn2Profile.constant(1e-15), M, epsilon)


def registration_alpha(cfg: OpticalConfig, spec: RegistrationSpec, frame_shape=None) -> float:
    """alpha implied by a registration choice, assuming constant Cn2."""
    if spec.kind == "none":
        return 0.0
    if spec.kind == "bma":
        return _cached_patch_alpha(cfg, int(spec.M), float(spec.epsilon))
    ext = spec.image_half_extent
    if ext is None:
        if frame_shape is None:
            raise ConfigError("global alpha needs image_half_extent or a frame shape")
        H, W = frame_shape
        ext = ((W - 1) // 2, (H - 1) // 2)
    M1, M2 = (ext, ext) if np.isscalar(ext) else ext
    return _cached_global_average(cfg, int(M1), int(M2), float(spec.epsilon))


def alpha_curve(cfg, profile, Ms, epsilon=0.0):
    """alpha for each patch half width in ``Ms`` (one shared lag grid)."""
    Ms = [int(m) for m in Ms]
    grid = build_autocorr_grid(cfg, profile, 2 * max(Ms))
    return np.array([tilt_correction_factor(cfg, profile, M, epsilon, grid=grid) for M in Ms])


def alpha_sensitivity(cfg, mean_cn2, deltas, Ms, epsilon=0.0):
    """alpha versus source-to-camera change for linear Cn2 profiles.

    Returns ``{M: array}`` over ``deltas`` (camera minus source) plus the
    constant-profile reference under key ``"constant"``.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(np.abs(deltas) > 2 * mean_cn2 * (1 + 1e-12)):
        raise ConfigError("|delta| > 2 * mean would make Cn2 negative somewhere on the path")
    out = {}
    for M in Ms:
        vals = []
        for d in deltas:
            prof = Cn2Profile.linear_delta(mean_cn2, float(d))
            vals.append(tilt_correction_factor(cfg, prof, M, epsilon))
        out[M] = np.array(vals)
    out["constant"] = {M: tilt_correction_factor(cfg, Cn2Profile.constant(mean_cn2), M, epsilon)
                       for M in Ms}
    return out
