"""2D tilt auto/cross-correlation lag fields in pixel units.

A lag ``n = (n1, n2)`` has ``n1`` along the horizontal (x, column) axis
and ``n2`` along the vertical (y, row) axis.  Lag fields are dense arrays
indexed ``[n2 + N2, n1 + N1]`` so they line up with image arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, OutOfRangeError
from .stats import TiltCorrelation1D, tabulate_correlations


def lag_distance(n1, n2):
    return np.hypot(n1, n2)


def lag_angle(n1, n2):
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    if np.any((n1 == 0) & (n2 == 0)):
        raise ValueError("lag angle undefined at n = 0")
    return np.arctan2(n2, n1)


class RadialCorrelation:
    """Cubic interpolation of tabulated 1D correlations in pixel units."""

    def __init__(self, corr: TiltCorrelation1D):
        self.corr = corr
        x = corr.separation_px
        self.max_distance = float(x[-1])
        if x.size >= 4:
            self._par = CubicSpline(x, corr.r_par_px)
            self._perp = CubicSpline(x, corr.r_perp_px)
        else:
            self._par = lambda d: np.interp(d, x, corr.r_par_px)
            self._perp = lambda d: np.interp(d, x, corr.r_perp_px)

    def _check(self, d):
        if np.any(d > self.max_distance * (1 + 1e-12)):
            raise OutOfRangeError(
                f"lag distance {float(np.max(d)):.3f} px beyond tabulated "
                f"{self.max_distance:.3f} px")

    def parallel(self, d):
        d = np.asarray(d, dtype=float)
        self._check(d)
        return self._par(d)

    def perpendicular(self, d):
        d = np.asarray(d, dtype=float)
        self._check(d)
        return self._perp(d)

    def components(self, n1, n2):
        """(r_par(d), r_perp(d), cos^2 phi, cos phi sin phi) for integer or real lags."""
        n1 = np.asarray(n1, dtype=float)
        n2 = np.asarray(n2, dtype=float)
        d2 = n1 * n1 + n2 * n2
        d = np.sqrt(d2)
        safe = np.where(d2 > 0, d2, 1.0)
        c2 = np.where(d2 > 0, n1 * n1 / safe, 1.0)
        cs = np.where(d2 > 0, n1 * n2 / safe, 0.0)
        return self.parallel(d), self.perpendicular(d), c2, cs


def _radial(corr):
    return corr if isinstance(corr, RadialCorrelation) else RadialCorrelation(corr)


def _unpack(n):
    n1, n2 = n
    return n1, n2


def autocorr_xx(n, corr):
    """Horizontal-tilt autocorrelation at lag ``n``, pixel^2."""
    rp, rq, c2, _ = _radial(corr).components(*_unpack(n))
    return rp * c2 + rq * (1.0 - c2)


def autocorr_yy(n, corr):
    """Vertical-tilt autocorrelation at lag ``n``, pixel^2."""
    rp, rq, c2, _ = _radial(corr).components(*_unpack(n))
    return rp * (1.0 - c2) + rq * c2


def crosscorr_xy(n, corr):
    """x/y tilt cross-correlation; zero whenever n lies on an axis."""
    rp, rq, _, cs = _radial(corr).components(*_unpack(n))
    return (rp - rq) * cs


@dataclass
class TiltAutocorr2D:
    half_extent: tuple
    r_xx: np.ndarray
    r_yy: np.ndarray
    r_xy: np.ndarray
    r_t: np.ndarray
    sigma_t2: float
    units: str = "px2"

    @property
    def shape(self):
        return self.r_xx.shape

    def _index(self, n1, n2):
        N1, N2 = self.half_extent
        n1 = np.asarray(n1)
        n2 = np.asarray(n2)
        if np.any(np.abs(n1) > N1) or np.any(np.abs(n2) > N2):
            raise OutOfRangeError(f"lag outside +/-({N1}, {N2}) grid")
        return n2 + N2, n1 + N1

    def at(self, n1, n2, which="xx"):
        arr = {"xx": self.r_xx, "yy": self.r_yy, "xy": self.r_xy, "t": self.r_t}[which]
        return arr[self._index(n1, n2)]

    def field(self, which):
        """Lag field for ``xx``, ``yy``, ``xy``, ``t`` or ``t/2``."""
        if which == "t/2":
            return self.r_t / 2.0
        return {"xx": self.r_xx, "yy": self.r_yy, "xy": self.r_xy, "t": self.r_t}[which]

    def crop(self, N1, N2=None):
        N2 = N1 if N2 is None else N2
        M1, M2 = self.half_extent
        if N1 > M1 or N2 > M2:
            raise OutOfRangeError(f"cannot crop +/-({M1}, {M2}) grid to +/-({N1}, {N2})")
        sl = (slice(M2 - N2, M2 + N2 + 1), slice(M1 - N1, M1 + N1 + 1))
        return TiltAutocorr2D((N1, N2), self.r_xx[sl], self.r_yy[sl], self.r_xy[sl],
                              self.r_t[sl], self.sigma_t2, self.units)


def autocorr_grid_from(corr, N1, N2=None) -> TiltAutocorr2D:
    """Evaluate all four lag fields over ``|n1| <= N1``, ``|n2| <= N2``."""
    N2 = N1 if N2 is None else N2
    if N1 < 0 or N2 < 0:
        raise ConfigError("grid half extent must be >= 0")
    rad = _radial(corr)
    n1 = np.arange(-N1, N1 + 1, dtype=float)[None, :]
    n2 = np.arange(-N2, N2 + 1, dtype=float)[:, None]
    rp, rq, c2, cs = rad.components(n1, n2)
    r_xx = rp * c2 + rq * (1.0 - c2)
    r_yy = rp * (1.0 - c2) + rq * c2
    r_xy = (rp - rq) * cs
    # the x/y decomposition sums to the isotropic total exactly
    r_t = rp + rq
    return TiltAutocorr2D((int(N1), int(N2)), r_xx, r_yy, r_xy, r_t,
                          float(rad.corr.sigma_t2_px2))


def required_separation(N1, N2=None, step=0.25) -> float:
    N2 = N1 if N2 is None else N2
    return math.hypot(N1, N2) + 2 * step


def build_autocorr_grid(cfg, profile, N1, N2=None, step=0.25, quadrature=None,
                        threads=1) -> TiltAutocorr2D:
    """Tabulate 1D correlations far enough and build the 2D lag fields."""
    N2 = N1 if N2 is None else N2
    corr = tabulate_correlations(cfg, profile, required_separation(N1, N2, step), step,
                                 quadrature=quadrature, threads=threads)
    return autocorr_grid_from(corr, N1, N2)
