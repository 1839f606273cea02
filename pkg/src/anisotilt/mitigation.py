"""Block matching and Wiener filtering (BMWF) turbulence mitigation.

Shift convention used throughout: a shift ``v = (dx, dy)`` is the
displacement of image *content*, so a frame shifted by ``v`` from a
reference satisfies ``frame(x) = reference(x - v)``.  Dewarping with a
field ``v`` samples the frame at ``x + v(x)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._parallel import parallel_map
from .errors import ConfigError, DataError
from .otf import otf_grid, wiener_transfer
from .regmodel import RegistrationSpec, registration_alpha


@dataclass
class GlobalShift:
    dx: float
    dy: float
    converged: bool = True
    low_confidence: bool = False
    ncc_peak: float = float("nan")

    def __iter__(self):
        yield self.dx
        yield self.dy


def _ncc_integer(frame, reference, max_shift):
    a = frame - frame.mean()
    b = reference - reference.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0:
        raise DataError("cannot register a constant image")
    c = np.real(np.fft.ifft2(np.fft.fft2(a) * np.conj(np.fft.fft2(b)))) / den
    H, W = c.shape
    sy = np.fft.fftfreq(H, 1.0 / H).astype(int)[:, None]
    sx = np.fft.fftfreq(W, 1.0 / W).astype(int)[None, :]
    allowed = (np.abs(sy) <= max_shift) & (np.abs(sx) <= max_shift)
    c = np.where(allowed, c, -np.inf)
    i, j = np.unravel_index(np.argmax(c), c.shape)
    peak = c[i, j]
    # ambiguous if another local maximum comes within 1% of the top one
    cf = np.where(np.isfinite(c), c, -1e300)
    local = (cf == ndimage.maximum_filter(cf, size=3, mode="wrap")) & np.isfinite(c)
    local[i, j] = False
    second = c[local].max() if local.any() else -np.inf
    ambiguous = bool(np.isfinite(second) and second >= peak - 0.01 * abs(peak))
    return int(sx[0, j]), int(sy[i, 0]), float(peak), ambiguous


def _lk_refine(frame, reference, v0, max_iter, tol):
    vx, vy = float(v0[0]), float(v0[1])
    H, W = frame.shape
    for _ in range(max_iter):
        m = int(np.ceil(max(abs(vx), abs(vy)))) + 4
        if 2 * m >= min(H, W) - 4:
            return vx, vy, False
        G = ndimage.shift(reference, (vy, vx), order=3, mode="nearest")
        gy, gx = np.gradient(G)
        sl = (slice(m, H - m), slice(m, W - m))
        e = (frame - G)[sl]
        gx, gy = gx[sl], gy[sl]
        A = np.array([[np.sum(gx * gx), np.sum(gx * gy)],
                      [np.sum(gx * gy), np.sum(gy * gy)]])
        rhs = -np.array([np.sum(gx * e), np.sum(gy * e)])
        try:
            d = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return vx, vy, False
        vx += d[0]
        vy += d[1]
        if np.hypot(*d) < tol:
            return vx, vy, True
    return vx, vy, False


def global_register(frame, reference, max_shift=None, refine=True, max_iter=50,
                    tol=1e-3) -> GlobalShift:
    """Whole-image translation of ``frame`` relative to ``reference``.

    Integer-pixel normalized cross-correlation followed by iterative
    Lucas-Kanade refinement.  If refinement does not converge the integer
    shift is returned with ``converged=False``.
    """
    frame = np.asarray(frame, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if frame.shape != reference.shape:
        raise DataError("frame and reference must have the same shape")
    if max_shift is None:
        max_shift = min(frame.shape) // 4
    ix, iy, peak, ambiguous = _ncc_integer(frame, reference, max_shift)
    if ambiguous:
        warnings.warn("NCC peak ambiguous (top two peaks within 1%)", RuntimeWarning, stacklevel=2)
    if not refine:
        return GlobalShift(float(ix), float(iy), True, ambiguous, peak)
    vx, vy, ok = _lk_refine(frame, reference, (ix, iy), max_iter, tol)
    if not ok or abs(vx - ix) > 1.5 or abs(vy - iy) > 1.5:
        return GlobalShift(float(ix), float(iy), False, ambiguous, peak)
    return GlobalShift(vx, vy, True, ambiguous, peak)


def shift_image(img, dx, dy, order=3):
    """Translate image content by ``(dx, dy)`` with replicated borders."""
    return ndimage.shift(np.asarray(img, dtype=float), (dy, dx), order=order, mode="nearest")


def register_global(frames, reference, threads=None):
    """Globally register each frame to ``reference``; returns (registered, shifts)."""
    def one(f):
        s = global_register(f, reference)
        return shift_image(f, -s.dx, -s.dy), s
    out = parallel_map(one, list(frames), threads)
    return np.stack([o[0] for o in out]), [o[1] for o in out]


def build_prototype(frames, global_reg: bool = False):
    """Temporal average, optionally after global registration to the raw average."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise DataError("need a (K, H, W) frame stack with K >= 1")
    mean = frames.mean(axis=0)
    if not global_reg:
        return mean
    registered, _ = register_global(frames, mean)
    return registered.mean(axis=0)


@dataclass
class ShiftField:
    dx: np.ndarray
    dy: np.ndarray
    block_dx: np.ndarray | None = None
    block_dy: np.ndarray | None = None
    M: int | None = None
    stride: int | None = None
    flat: np.ndarray | None = None
    subpixel: bool = False

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def constant(cls, shape, dx, dy):
        return cls(np.full(shape, float(dx)), np.full(shape, float(dy)), subpixel=True)

    @property
    def shape(self):
        return self.dx.shape


def _tiles(n, B):
    starts = np.arange(0, n, B)
    ends = np.minimum(starts + B, n)
    return starts, (starts + ends - 1) / 2.0


def _interp_axis(values, centers, n, axis):
    """Linear interpolation along ``axis`` from ``centers`` to 0..n-1, clamped."""
    x = np.arange(n, dtype=float)
    if centers.size == 1:
        return np.repeat(values, n, axis=axis)
    x = np.clip(x, centers[0], centers[-1])
    i = np.clip(np.searchsorted(centers, x, side="right") - 1, 0, centers.size - 2)
    t = (x - centers[i]) / (centers[i + 1] - centers[i])
    v0 = np.take(values, i, axis=axis)
    v1 = np.take(values, i + 1, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = n
    t = t.reshape(shape)
    return v0 * (1 - t) + v1 * t


def bma_register(frame, prototype, M: int, S: int = 8, cost: str = "sad") -> ShiftField:
    """Per-block integer shifts of ``frame`` relative to ``prototype``.

    Non-overlapping (2M+1)^2 blocks (the last row/column of blocks is
    truncated at the image border).  Each block's shift minimizes the
    matching cost over ``|dx|, |dy| <= S``; ties go to the smaller shift.
    Block shifts are bilinearly interpolated between block centres to a
    per-pixel field.
    """
    if M < 1 or S < 1:
        raise ConfigError("BMA needs M >= 1 and S >= 1")
    if cost not in ("sad", "ncc"):
        raise ConfigError("cost must be 'sad' or 'ncc'")
    frame = np.asarray(frame, dtype=float)
    proto = np.asarray(prototype, dtype=float)
    if frame.shape != proto.shape:
        raise DataError("frame and prototype must have the same shape")
    H, W = frame.shape
    B = 2 * M + 1
    ys, cy = _tiles(H, B)
    xs, cx = _tiles(W, B)

    def bsum(a):
        return np.add.reduceat(np.add.reduceat(a, ys, axis=0), xs, axis=1)

    counts = bsum(np.ones((H, W)))
    pm = bsum(proto) / counts
    pvar = bsum(proto * proto) / counts - pm * pm
    flat = pvar <= 1e-12 * max(1.0, float(np.max(np.abs(proto)) ** 2))
    padded = np.pad(frame, S, mode="edge")
    best = np.full(pm.shape, np.inf)
    bdx = np.zeros(pm.shape)
    bdy = np.zeros(pm.shape)
    cands = sorted(((dx, dy) for dy in range(-S, S + 1) for dx in range(-S, S + 1)),
                   key=lambda v: (v[0] ** 2 + v[1] ** 2, v[1], v[0]))
    for dx, dy in cands:
        shifted = padded[S + dy:S + dy + H, S + dx:S + dx + W]
        if cost == "sad":
            c = bsum(np.abs(shifted - proto))
        else:
            fm = bsum(shifted) / counts
            fvar = bsum(shifted * shifted) / counts - fm * fm
            cov = bsum(shifted * proto) / counts - fm * pm
            c = -cov / np.sqrt(np.maximum(fvar * pvar, 1e-300))
        better = c < best
        best = np.where(better, c, best)
        bdx = np.where(better, dx, bdx)
        bdy = np.where(better, dy, bdy)
    bdx[flat] = 0.0
    bdy[flat] = 0.0
    fx = _interp_axis(_interp_axis(bdx, cy, H, 0), cx, W, 1)
    fy = _interp_axis(_interp_axis(bdy, cy, H, 0), cx, W, 1)
    return ShiftField(fx, fy, bdx, bdy, M, B, flat, subpixel=False)


def warp(img, dx, dy, order=1):
    """Backward-mapped resample: ``out(x) = img(x - v(x))``, replicated borders."""
    img = np.asarray(img, dtype=float)
    H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    return ndimage.map_coordinates(img, [yy - dy, xx - dx], order=order, mode="nearest")


def dewarp(frame, field: ShiftField):
    """Undo a content displacement field: ``out(x) = frame(x + v(x))``."""
    return warp(frame, -field.dx, -field.dy)


def fuse(frames):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise DataError("need a (K, H, W) stack")
    return frames.mean(axis=0)


def wiener_restore(fused, cfg, r0, alpha, gamma=1e-3, pad=0, clip=None, H=None):
    """Wiener deconvolution of the fused image with the alpha-dependent OTF.

    ``pad`` reflect-pads the image before the FFT (0 means strictly
    periodic processing).  ``H`` overrides the model OTF (unshifted FFT
    grid of the padded image).  Clipping, if requested, happens last.
    """
    f = np.asarray(fused, dtype=float)
    if pad:
        f = np.pad(f, pad, mode="reflect")
    if H is None:
        H = otf_grid(cfg, r0, alpha, f.shape)
    Hw = wiener_transfer(H, gamma)
    out = np.real(np.fft.ifft2(Hw * np.fft.fft2(f)))
    if pad:
        out = out[pad:-pad, pad:-pad]
    if clip is not None:
        out = np.clip(out, clip[0], clip[1])
    return out


@dataclass
class MitigationConfig:
    M: int = 10
    S: int = 8
    gamma: float = 1e-3
    registration: str = "bma"
    prototype_registration: str = "none"
    epsilon: float = 1.0 / 12.0
    global_epsilon: float = 0.0
    cost: str = "sad"
    pad: int = 16
    clip: tuple | None = None

    def __post_init__(self):
        if self.M < 1 or self.S < 1:
            raise ConfigError("need M >= 1 and S >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.registration not in ("none", "global", "bma"):
            raise ConfigError("registration must be none, global or bma")
        if self.prototype_registration not in ("none", "global"):
            raise ConfigError("prototype registration must be none or global")

    def registration_spec(self, shape=None) -> RegistrationSpec:
        if self.registration == "bma":
            return RegistrationSpec("bma", self.M, self.epsilon)
        if self.registration == "global":
            return RegistrationSpec("global", 0, self.global_epsilon)
        return RegistrationSpec("none")


@dataclass
class MitigationResult:
    restored: np.ndarray
    fused: np.ndarray
    prototype: np.ndarray
    alpha: float
    r0: float
    shifts: list = field(default_factory=list)


def register_sequence(frames, mcfg: MitigationConfig, prototype=None, threads=None):
    """Register frames per ``mcfg.registration``; returns (registered, prototype, shifts)."""
    frames = np.asarray(frames, dtype=float)
    if prototype is None:
        prototype = build_prototype(frames, mcfg.prototype_registration == "global")
    if mcfg.registration == "none":
        return frames, prototype, []
    if mcfg.registration == "global":
        reg, shifts = register_global(frames, prototype, threads)
        return reg, prototype, shifts

    def one(f):
        fld = bma_register(f, prototype, mcfg.M, mcfg.S, mcfg.cost)
        return dewarp(f, fld), fld
    out = parallel_map(one, list(frames), threads)
    return np.stack([o[0] for o in out]), prototype, [o[1] for o in out]


def bmwf(frames, cfg, mcfg: MitigationConfig, r0: float, threads=None) -> MitigationResult:
    """Prototype -> register -> average -> Wiener restore."""
    frames = np.asarray(frames, dtype=float)
    registered, proto, shifts = register_sequence(frames, mcfg, threads=threads)
    fused = fuse(registered)
    alpha = registration_alpha(cfg, mcfg.registration_spec(), frames.shape[1:])
    restored = wiener_restore(fused, cfg, r0, alpha, mcfg.gamma, pad=mcfg.pad, clip=mcfg.clip)
    return MitigationResult(restored, fused, proto, alpha, r0, shifts)
