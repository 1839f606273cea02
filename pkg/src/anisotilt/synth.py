"""Statistical turbulence degradation synthesizer.

Generates temporally independent frames whose warps are jointly Gaussian
x/y tilt fields with the anisoplanatic 2D correlations, blurred by the
diffraction x short-exposure OTF and corrupted by white Gaussian noise.
Blur is spatially invariant within a frame (isoplanatic approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .corr2d import TiltAutocorr2D, build_autocorr_grid
from .errors import ConfigError, DataError, SpectralValidityError
from .friedest import ImageSequence
from .mitigation import warp
from .otf import otf_grid
from .stats import Cn2Profile, OpticalConfig, fried_parameter


@dataclass(frozen=True)
class SynthConfig:
    cfg: OpticalConfig
    profile: Cn2Profile
    frames: int = 100
    noise_sigma: float = 1.0
    seed: int = 0
    grid_scale: int = 2
    warp_order: int = 1

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError("frame count must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.grid_scale < 1:
            raise ConfigError("grid scale must be >= 1")


def _periodic_lags(n):
    j = np.arange(n)
    return np.where(j <= n // 2, j, j - n)


class TiltFieldSynthesizer:
    """Spectral factorization of the 2x2 tilt cross-spectral density.

    The lag fields are embedded periodically on a ``scale``-times larger
    grid and each sample is cropped from that grid.  Negative eigenvalues
    of the per-frequency 2x2 spectra are clamped to zero and their share
    of the total spectral power is kept in ``clamped_fraction``.

    ``method="gradient"`` (default) uses the fact that the tilt field is
    the gradient of an isotropic scalar field: the cross-spectrum is
    ``S_T(k) u u^T`` with ``u = k/|k|`` and ``S_T`` the spectrum of
    ``r_T = r_xx + r_yy``.  ``method="eigh"`` factorizes the embedded
    ``r_xx, r_yy, r_xy`` spectra directly; truncating the slowly decaying
    correlations destroys their rank-one structure, so that route usually
    exceeds the clamping limit for image-sized grids.
    """

    def __init__(self, corr: TiltAutocorr2D, H: int, W: int, scale: int = 2,
                 method: str = "gradient", max_clamped=0.05):
        if method not in ("gradient", "eigh"):
            raise ConfigError("method must be 'gradient' or 'eigh'")
        P2, P1 = scale * H, scale * W
        N1, N2 = corr.half_extent
        if P1 // 2 > N1 or P2 // 2 > N2:
            raise DataError(
                f"correlation grid +/-({N1}, {N2}) does not cover the "
                f"+/-({P1 // 2}, {P2 // 2}) embedding")
        self.H, self.W = H, W
        self.shape = (P2, P1)
        self.method = method
        iy = _periodic_lags(P2)[:, None] + N2
        ix = _periodic_lags(P1)[None, :] + N1

        def spec(r):
            return np.real(np.fft.fft2(r[iy, ix]))

        if method == "eigh":
            S = np.empty((P2, P1, 2, 2))
            S[..., 0, 0] = spec(corr.r_xx)
            S[..., 1, 1] = spec(corr.r_yy)
            S[..., 0, 1] = S[..., 1, 0] = spec(corr.r_xy)
            lam, vec = np.linalg.eigh(S)
        else:
            St = spec(corr.r_t)
            fy = np.fft.fftfreq(P2)[:, None]
            fx = np.fft.fftfreq(P1)[None, :]
            k = np.hypot(fx, fy)
            k[0, 0] = 1.0
            # big eigenvector along k, null one across; DC is an isotropic global shift
            vec = np.empty((P2, P1, 2, 2))
            vec[..., 0, 1] = fx / k
            vec[..., 1, 1] = fy / k
            vec[..., 0, 0] = -fy / k
            vec[..., 1, 0] = fx / k
            vec[0, 0] = np.eye(2)
            lam = np.zeros((P2, P1, 2))
            lam[..., 1] = St
            lam[0, 0] = St[0, 0] / 2.0
        neg = np.minimum(lam, 0.0)
        self.clamped_fraction = float(np.abs(neg).sum() / np.abs(lam).sum())
        if self.clamped_fraction > max_clamped:
            raise SpectralValidityError(
                f"{100 * self.clamped_fraction:.2f}% of spectral power is negative; "
                "correlation inputs are not a valid covariance")
        root = np.sqrt(np.maximum(lam, 0.0) / (P1 * P2))
        self._A = np.einsum("...ik,...k,...jk->...ij", vec, root, vec)

    def sample(self, rng):
        """One (x, y) tilt field pair in pixels."""
        P = self.shape
        xi = rng.standard_normal((2,) + P) + 1j * rng.standard_normal((2,) + P)
        spec = np.einsum("...ij,j...->i...", self._A, xi)
        z = np.fft.fft2(spec, axes=(1, 2))
        fields = np.real(z)[:, :self.H, :self.W]
        return fields[0], fields[1]


def synth_tilt_fields(corr: TiltAutocorr2D, H: int, W: int, seed=0, scale=2,
                      method="gradient"):
    """Zero-mean Gaussian x/y tilt fields (pixels) with the given correlations."""
    syn = TiltFieldSynthesizer(corr, H, W, scale, method)
    return syn.sample(np.random.default_rng(seed))


def warp_image(img, tilt_x, tilt_y, order=1):
    """Displace image content by the tilt fields (backward-mapped, replicated borders)."""
    tx = np.asarray(tilt_x, dtype=float)
    ty = np.asarray(tilt_y, dtype=float)
    if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(ty))):
        raise DataError("tilt fields must be finite")
    return warp(img, tx, ty, order=order)


def blur_image(img, H, pad=32):
    """Apply an OTF (unshifted grid of the padded image) with reflect padding."""
    f = np.pad(np.asarray(img, dtype=float), pad, mode="reflect") if pad else img
    out = np.real(np.fft.ifft2(np.fft.fft2(f) * H))
    return out[pad:-pad, pad:-pad] if pad else out


@dataclass
class _Plan:
    syn: TiltFieldSynthesizer | None
    otf: np.ndarray
    pad: int
    r0: float
    sigma_t2: float
    meta: dict = field(default_factory=dict)


def _plan(shape, scfg: SynthConfig, pad=32, threads=1):
    H, W = shape
    cfg = scfg.cfg
    zero = scfg.profile.is_zero
    r0 = math.inf if zero else fried_parameter(cfg, scfg.profile)
    shp = (H + 2 * pad, W + 2 * pad)
    Hotf = otf_grid(cfg, r0, 1.0, shp, components="dif*se")
    if zero:
        return _Plan(None, Hotf, pad, r0, 0.0)
    s = scfg.grid_scale
    N1, N2 = (s * W) // 2, (s * H) // 2
    grid = build_autocorr_grid(cfg, scfg.profile, N1, N2, threads=threads)
    syn = TiltFieldSynthesizer(grid, H, W, s)
    return _Plan(syn, Hotf, pad, r0, grid.sigma_t2,
                 {"clamped_fraction": syn.clamped_fraction})


def degrade_sequence(truth, scfg: SynthConfig, threads=None, return_tilts=False):
    """Synthesize ``scfg.frames`` degraded observations of ``truth``.

    Frame ``k`` uses the generator seeded with ``(seed, k)``, so output is
    independent of thread count and of how many frames are requested.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2 or not np.all(np.isfinite(truth)):
        raise DataError("truth must be a finite 2D image")
    plan = _plan(truth.shape, scfg, threads=threads or 1)

    def one(k):
        rng = np.random.default_rng([scfg.seed, k])
        if plan.syn is not None:
            tx, ty = plan.syn.sample(rng)
            img = warp_image(truth, tx, ty, order=scfg.warp_order)
        else:
            tx = ty = np.zeros_like(truth)
            img = truth
        img = blur_image(img, plan.otf, plan.pad)
        if scfg.noise_sigma > 0:
            img = img + rng.normal(0.0, scfg.noise_sigma, img.shape)
        return (img, tx, ty) if return_tilts else (img,)

    out = parallel_map(one, range(scfg.frames), threads)
    frames = np.stack([o[0] for o in out])
    meta = {"r0_m": plan.r0, "sigmaT2_px2": plan.sigma_t2, "frames": scfg.frames,
            "seed": scfg.seed, "noise_sigma": scfg.noise_sigma,
            "cn2": list(scfg.profile.values), "cn2_kind": scfg.profile.kind, **plan.meta}
    seq = ImageSequence(frames, scfg.cfg, meta)
    if return_tilts:
        return seq, np.stack([o[1] for o in out]), np.stack([o[2] for o in out])
    return seq


def synthetic_scene(size=256, seed=0, lo=20.0, hi=235.0):
    """Deterministic test scene: random shapes over 1/f texture, in [lo, hi]."""
    H, W = (size, size) if np.isscalar(size) else size
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    tex = np.real(np.fft.ifft2((rng.standard_normal((H, W)) + 1j * rng.standard_normal((H, W))) / f))
    tex = (tex - tex.mean()) / tex.std()
    img = 0.35 * tex
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(int(0.0006 * H * W) + 8):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        level = rng.uniform(-1.5, 1.5)
        if rng.random() < 0.5:
            a, b = rng.uniform(3, max(4, H / 8)), rng.uniform(3, max(4, W / 8))
            mask = (np.abs(yy - cy) < a) & (np.abs(xx - cx) < b)
        else:
            r = rng.uniform(3, max(4, min(H, W) / 10))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[mask] = 0.5 * img[mask] + level
    img = (img - img.min()) / (img.max() - img.min())
    return lo + (hi - lo) * img
