"""Spherical-wave Z-tilt correlation statistics.

The two-source tilt correlations are triple integrals over the path
coordinate ``z`` (``z = 0`` at the source), an aperture angle and a
normalized aperture radius ``u``.  The path integral is linear in
Cn2(z), so the inner (u, angle) integrals are evaluated once per
separation and Gauss-Legendre path node and cached as *kernels*; any
profile is then a weighted dot product with those kernels.

Angles are radians and correlations rad^2 internally.  Pixel units are
obtained with ``r_px(x) = r_rad(xi * x) / xi**2`` where ``xi`` is the
angle subtended by one pixel.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigError, QuadratureError, ZeroTurbulenceError

_REL = 5e-3  # accepts values rounded to 2-3 significant digits


@dataclass(frozen=True)
class OpticalConfig:
    """Imaging geometry.  Lengths in metres, angles in radians.

    ``f_number`` and ``pixel_angle`` are derived (``l / D`` and
    ``delta / l``) when omitted; if supplied they must agree with the
    other fields to 1e-6 relative.
    """

    aperture_diameter: float
    focal_length: float
    wavelength: float
    path_length: float
    pixel_pitch: float
    f_number: float | None = None
    pixel_angle: float | None = None

    def __post_init__(self):
        for name in ("aperture_diameter", "focal_length", "wavelength",
                     "path_length", "pixel_pitch"):
            v = getattr(self, name)
            if v is None or not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be finite and > 0, got {v!r}")
        fnum = self.focal_length / self.aperture_diameter
        if self.f_number is None:
            object.__setattr__(self, "f_number", fnum)
        elif not self.f_number > 0 or abs(self.f_number - fnum) > _REL * fnum:
            raise ConfigError(
                f"f_number {self.f_number} inconsistent with l/D = {fnum:.8g}")
        xi = self.pixel_pitch / self.focal_length
        if self.pixel_angle is None:
            object.__setattr__(self, "pixel_angle", xi)
        elif not self.pixel_angle > 0 or abs(self.pixel_angle - xi) > _REL * xi:
            raise ConfigError(
                f"pixel_angle {self.pixel_angle} inconsistent with delta/l = {xi:.8g}")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def cutoff_frequency(self) -> float:
        """Optical cut-off in cycles per metre in the focal plane."""
        return 1.0 / (self.wavelength * self.f_number)

    @property
    def cutoff_cycles_per_pixel(self) -> float:
        return self.cutoff_frequency * self.pixel_pitch

    def check_near_field(self) -> bool:
        """Warn (and return False) when D < sqrt(L * lambda)."""
        limit = math.sqrt(self.path_length * self.wavelength)
        if self.aperture_diameter < limit:
            warnings.warn(
                f"aperture {self.aperture_diameter:g} m is below sqrt(L*lambda) = "
                f"{limit:g} m; near-field OTF model may be inaccurate",
                RuntimeWarning, stacklevel=2)
            return False
        return True


def table1_config() -> OpticalConfig:
    """Reference camera: 0.2034 m aperture, 1.2 m focal length, 525 nm, 7 km."""
    return OpticalConfig(aperture_diameter=0.2034, focal_length=1.2,
                         wavelength=0.525e-6, path_length=7000.0,
                         pixel_pitch=1.5488e-6)


@dataclass(frozen=True)
class Cn2Profile:
    """Refractive-index structure parameter along the path, m^(-2/3).

    kinds
      ``constant``: ``values == (c,)``
      ``linear``:   ``values == (at_source, at_camera)``, linear in z/L
      ``sampled``:  ``values`` at absolute positions ``z`` (metres, from
                    the source), piecewise-linear in between
    """

    kind: str
    values: tuple
    z: tuple = ()

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        if not all(np.isfinite(vals)):
            raise ConfigError("Cn2 values must be finite")
        if self.kind == "constant":
            if len(vals) != 1:
                raise ConfigError("constant profile takes exactly one value")
        elif self.kind == "linear":
            if len(vals) != 2:
                raise ConfigError("linear profile takes (source, camera) values")
        elif self.kind == "sampled":
            if len(vals) != len(self.z) or len(vals) < 2:
                raise ConfigError("sampled profile needs matching z and values (>= 2)")
            if np.any(np.diff(self.z) <= 0):
                raise ConfigError("sampled profile z grid must be strictly increasing")
        else:
            raise ConfigError(f"unknown Cn2 profile kind {self.kind!r}")
        if min(vals) < 0:
            raise ConfigError("Cn2 must be non-negative")

    @classmethod
    def constant(cls, value):
        return cls("constant", (value,))

    @classmethod
    def linear(cls, at_source, at_camera):
        return cls("linear", (at_source, at_camera))

    @classmethod
    def linear_delta(cls, mean, delta):
        """Linear profile with path mean ``mean`` and camera-minus-source change ``delta``."""
        return cls("linear", (mean - delta / 2.0, mean + delta / 2.0))

    @classmethod
    def sampled(cls, z, values):
        return cls("sampled", tuple(values), tuple(z))

    def scaled(self, factor: float) -> "Cn2Profile":
        return Cn2Profile(self.kind, tuple(factor * v for v in self.values), self.z)

    @property
    def is_zero(self) -> bool:
        return max(self.values) == 0.0

    def validate(self, path_length: float) -> None:
        if self.kind == "sampled":
            tol = 1e-9 * path_length
            if self.z[0] > tol or self.z[-1] < path_length - tol:
                raise ConfigError(
                    f"sampled Cn2 grid [{self.z[0]}, {self.z[-1]}] does not cover [0, {path_length}]")

    def __call__(self, z, path_length: float):
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.full_like(z, self.values[0])
        if self.kind == "linear":
            s = z / path_length
            return self.values[0] + (self.values[1] - self.values[0]) * s
        return np.interp(z, self.z, self.values)

    def breakpoints(self, path_length: float):
        if self.kind == "sampled":
            return [p for p in self.z if 0.0 < p < path_length]
        return []


@dataclass(frozen=True)
class Quadrature:
    """Node counts for the (z, angle, u) tilt integrals."""

    nz: int = 64
    ntheta: int = 64
    nu: int = 64

    def doubled(self) -> "Quadrature":
        return Quadrature(2 * self.nz, 2 * self.ntheta, 2 * self.nu)


DEFAULT_QUADRATURE = Quadrature()


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


class _KernelTable:
    """Per-(config, quadrature) cache of path kernels keyed by separation."""

    def __init__(self, cfg: OpticalConfig, q: Quadrature):
        if q.ntheta % 2:
            raise ConfigError("ntheta must be even")
        self.cfg = cfg
        self.q = q
        L, D = cfg.path_length, cfg.aperture_diameter
        s, sw = _gauss01(q.nz)
        self.z = s * L
        self.zw = sw * L
        u, uw = _gauss01(q.nu)
        # uniform composite rule on [0, 2pi) folded onto [0, pi] (integrand even in angle)
        nt = q.ntheta
        t = np.arange(nt // 2 + 1) * (2.0 * np.pi / nt)
        tw = np.full(t.size, 2.0 * (2.0 * np.pi / nt))
        tw[0] /= 2.0
        tw[-1] /= 2.0
        sq = np.sqrt(1.0 - u * u)
        p0 = u * np.arccos(u) / 8.0 + u * sq * (u ** 3 / 12.0 - 5.0 * u / 24.0)
        p1 = u * sq * (u ** 3 - u) / 3.0
        ptot = u * np.arccos(u) - u * u * (3.0 - 2.0 * u * u) * sq
        c2 = np.cos(t) ** 2
        base = uw[None, :] * tw[:, None]
        self.w_par = (p0[None, :] + p1[None, :] * c2[:, None]) * base
        self.w_perp = (p0[None, :] + p1[None, :] * (1.0 - c2)[:, None]) * base
        self.w_tot = ptot[None, :] * base
        self.c_dir = -(2.91 / 8.0) * (64.0 / np.pi) ** 2 * D ** (-1.0 / 3.0)
        self.c_tot = -(2.91 / 2.0) * (16.0 / np.pi) ** 2 * D ** (-1.0 / 3.0)
        self._a = u[None, None, :] * (self.z / L)[:, None, None]
        self._cos = np.cos(t)[None, :, None]
        self._b_scale = (L - self.z) / D
        self._rows: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    def _compute(self, theta: float) -> np.ndarray:
        a = self._a
        b = (self._b_scale * theta)[:, None, None]
        bracket = a * a + b * b + 2.0 * a * b * self._cos
        np.maximum(bracket, 0.0, out=bracket)
        B = bracket ** (5.0 / 6.0)
        out = np.empty((3, self.q.nz))
        out[0] = self.c_dir * np.einsum("ztu,tu->z", B, self.w_par)
        out[1] = self.c_dir * np.einsum("ztu,tu->z", B, self.w_perp)
        out[2] = self.c_tot * np.einsum("ztu,tu->z", B, self.w_tot)
        return out

    def rows(self, thetas) -> np.ndarray:
        """Kernel rows, shape (len(thetas), 3, nz): parallel, perpendicular, total."""
        thetas = [float(t) for t in np.atleast_1d(thetas)]
        missing = [t for t in dict.fromkeys(thetas) if t not in self._rows]
        for t in missing:
            r = self._compute(t)
            with self._lock:
                self._rows[t] = r
        return np.stack([self._rows[t] for t in thetas])

    def path_weights(self, profile: Cn2Profile) -> np.ndarray:
        return profile(self.z, self.cfg.path_length) * self.zw


_tables: dict = {}
_tables_lock = threading.Lock()


def _table(cfg: OpticalConfig, q: Quadrature) -> _KernelTable:
    key = (cfg, q)
    with _tables_lock:
        tab = _tables.get(key)
        if tab is None:
            tab = _tables[key] = _KernelTable(cfg, q)
    return tab


def clear_cache() -> None:
    with _tables_lock:
        _tables.clear()


_COMPONENT = {"parallel": 0, "perpendicular": 1, "total": 2}


def _evaluate(cfg, profile, theta, component, q):
    profile.validate(cfg.path_length)
    tab = _table(cfg, q)
    rows = tab.rows(theta)[:, _COMPONENT[component], :]
    return rows @ tab.path_weights(profile)


def _adaptive(cfg, profile, theta, component, rtol, quadrature, max_nodes):
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(th < 0) or not np.all(np.isfinite(th)):
        raise ConfigError("separation angle must be finite and >= 0")
    q = quadrature or DEFAULT_QUADRATURE
    prev = _evaluate(cfg, profile, th, component, q)
    while True:
        q2 = q.doubled()
        cur = _evaluate(cfg, profile, th, component, q2)
        scale = np.maximum(np.abs(cur), np.finfo(float).tiny)
        if np.all(np.abs(cur - prev) <= rtol * scale) or profile.is_zero:
            break
        if max(q2.nz, q2.ntheta, q2.nu) * 2 > max_nodes:
            raise QuadratureError(
                f"{component} tilt correlation did not reach rtol={rtol} "
                f"with {q2} nodes", previous=prev, last=cur)
        q, prev = q2, cur
    return float(cur[0]) if np.ndim(theta) == 0 else cur


def tilt_corr_parallel(cfg, profile, theta, rtol=1e-4, quadrature=None, max_nodes=512):
    """Tilt correlation (rad^2) along the direction of source separation."""
    return _adaptive(cfg, profile, theta, "parallel", rtol, quadrature, max_nodes)


def tilt_corr_perp(cfg, profile, theta, rtol=1e-4, quadrature=None, max_nodes=512):
    """Tilt correlation (rad^2) perpendicular to the source separation."""
    return _adaptive(cfg, profile, theta, "perpendicular", rtol, quadrature, max_nodes)


def tilt_corr_total(cfg, profile, theta, rtol=1e-4, quadrature=None, max_nodes=512):
    """Two-axis (dot product) tilt correlation, evaluated from its own integrand."""
    return _adaptive(cfg, profile, theta, "total", rtol, quadrature, max_nodes)


def tilt_corr_pixels(corr_rad, cfg: OpticalConfig):
    """Convert a correlation from rad^2 to pixel^2."""
    return np.asarray(corr_rad) / cfg.pixel_angle ** 2


def tilt_corr_radians(corr_px, cfg: OpticalConfig):
    return np.asarray(corr_px) * cfg.pixel_angle ** 2


def separation_to_pixels(theta, cfg: OpticalConfig):
    return np.asarray(theta) / cfg.pixel_angle


def pixels_to_separation(x, cfg: OpticalConfig):
    return np.asarray(x) * cfg.pixel_angle


def _path_integral(cfg, profile, weight):
    profile.validate(cfg.path_length)
    if profile.is_zero:
        raise ZeroTurbulenceError("Cn2 profile is identically zero")
    L = cfg.path_length
    if profile.kind == "constant":
        exact = {"source": 3.0 / 8.0, "aperture": 3.0 / 8.0}[weight]
        return profile.values[0] * L * exact
    if weight == "source":
        f = lambda z: profile(z, L) * (z / L) ** (5.0 / 3.0)
    else:
        f = lambda z: profile(z, L) * ((L - z) / L) ** (5.0 / 3.0)
    val, _ = integrate.quad(f, 0.0, L, points=profile.breakpoints(L) or None,
                            limit=200, epsabs=0.0, epsrel=1e-12)
    return val


def fried_parameter(cfg: OpticalConfig, profile: Cn2Profile) -> float:
    """Spherical-wave Fried parameter r0 in metres."""
    integral = _path_integral(cfg, profile, "source")
    return (0.423 * cfg.wavenumber ** 2 * integral) ** (-3.0 / 5.0)


def isoplanatic_angle(cfg: OpticalConfig, profile: Cn2Profile) -> float:
    """Isoplanatic angle in radians (distance measured from the aperture)."""
    # integral of Cn2 * (L - z)^(5/3) = L^(5/3) * integral of Cn2 * ((L - z)/L)^(5/3)
    integral = _path_integral(cfg, profile, "aperture") * cfg.path_length ** (5.0 / 3.0)
    return (2.91 * cfg.wavenumber ** 2 * integral) ** (-3.0 / 5.0)


def isoplanatic_angle_pixels(cfg, profile) -> float:
    return isoplanatic_angle(cfg, profile) / cfg.pixel_angle


@dataclass
class TiltCorrelation1D:
    """Tabulated parallel / perpendicular / total correlations.

    Values are stored in rad^2; the ``*_px`` properties give pixel^2.
    """

    separation_px: np.ndarray
    r_par: np.ndarray
    r_perp: np.ndarray
    r_total: np.ndarray
    pixel_angle: float
    units: str = field(default="rad2")

    @property
    def separation_rad(self):
        return self.separation_px * self.pixel_angle

    @property
    def r_par_px(self):
        return self.r_par / self.pixel_angle ** 2

    @property
    def r_perp_px(self):
        return self.r_perp / self.pixel_angle ** 2

    @property
    def r_total_px(self):
        return self.r_total / self.pixel_angle ** 2

    @property
    def sigma_t2_rad2(self) -> float:
        return float(self.r_par[0]) if self.separation_px[0] == 0 else float("nan")

    @property
    def sigma_t2_px2(self) -> float:
        return self.sigma_t2_rad2 / self.pixel_angle ** 2

    @property
    def max_separation_px(self) -> float:
        return float(self.separation_px[-1])


def tabulate_correlations(cfg: OpticalConfig, profile: Cn2Profile, max_separation: float,
                          step: float = 0.25, quadrature: Quadrature | None = None,
                          rtol: float = 1e-4, check_points: int = 3,
                          threads: int = 1) -> TiltCorrelation1D:
    """Tabulate the correlations on ``0, step, ..., >= max_separation`` pixels.

    The sum of the directional integrals is used as the total, so the
    ``total == par + perp`` identity holds to rounding.  Convergence is
    spot-checked (quadrature doubling) at ``check_points`` evenly spread
    grid points; the full grid uses the base rule.
    """
    if max_separation < 0 or step <= 0:
        raise ConfigError("need max_separation >= 0 and step > 0")
    q = quadrature or DEFAULT_QUADRATURE
    n = int(math.ceil(max_separation / step - 1e-9)) + 1
    x = np.arange(n) * step
    theta = x * cfg.pixel_angle
    profile.validate(cfg.path_length)
    tab = _table(cfg, q)
    if threads > 1 and n > 1:
        from ._parallel import parallel_map
        chunks = np.array_split(theta, threads * 4)
        parts = parallel_map(tab.rows, [c for c in chunks if c.size], threads)
        rows = np.concatenate(parts)
    else:
        rows = tab.rows(theta)
    w = tab.path_weights(profile)
    r_par = rows[:, 0, :] @ w
    r_perp = rows[:, 1, :] @ w
    if check_points and not profile.is_zero:
        idx = np.unique(np.linspace(0, n - 1, check_points).round().astype(int))
        fine = _evaluate(cfg, profile, theta[idx], "parallel", q.doubled())
        bad = np.abs(fine - r_par[idx]) > rtol * np.abs(fine)
        if np.any(bad):
            i = idx[bad][0]
            raise QuadratureError(
                f"tilt correlation at {x[i]} px not converged with {q}",
                previous=r_par[i], last=fine[bad][0])
    return TiltCorrelation1D(x, r_par, r_perp, r_par + r_perp, cfg.pixel_angle)


def tilt_variance_px(cfg, profile, quadrature=None) -> float:
    """One-axis tilt variance in pixel^2."""
    return float(tilt_corr_pixels(tilt_corr_parallel(cfg, profile, 0.0, quadrature=quadrature), cfg))
