"""Grayscale image and sequence I/O plus the key=value optics config format.

Intensities are kept linear as 64-bit floats; clamping and rounding
happen only when writing.  PGM (P5) is handled here directly; PNG goes
through Pillow.

Config file format (one ``key = value`` per line, ``#`` comments)::

    aperture_diameter = 0.2034   # D, metres
    focal_length      = 1.2      # l, metres
    wavelength        = 0.525e-6 # lambda, metres
    path_length       = 7000     # L, metres
    pixel_pitch       = 1.5488e-6 # delta, metres
    f_number          = 5.9      # optional, checked against l / D
    pixel_angle       = 1.29e-6  # optional, radians, checked against delta / l
    cn2               = 1e-15    # constant Cn^2, m^(-2/3)
    cn2_source, cn2_camera       # linear profile end points instead of cn2
    cn2_level         = 4        # 1..6, preset constant levels (0.1 to 2.0 x 1e-15) instead of cn2

Any other ``option.<name>`` key is passed through as a command option.
"""

from __future__ import annotations

import glob
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .stats import Cn2Profile, OpticalConfig

LEVELS = {1: 0.1e-15, 2: 0.25e-15, 3: 0.5e-15, 4: 1.0e-15, 5: 1.5e-15, 6: 2.0e-15}

_OPTICS_KEYS = ("aperture_diameter", "focal_length", "wavelength", "path_length",
                "pixel_pitch", "f_number", "pixel_angle")
_CN2_KEYS = ("cn2", "cn2_source", "cn2_camera", "cn2_level")


@dataclass
class ImageBuffer:
    data: np.ndarray
    bit_depth: int = 8
    source: str | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2:
            raise DataError("image must be 2D grayscale")
        if min(d.shape) < 8:
            raise DataError(f"image {d.shape} smaller than 8x8")
        if not np.all(np.isfinite(d)):
            raise DataError("image contains non-finite values")
        if self.bit_depth not in (8, 16):
            raise ConfigError("bit depth must be 8 or 16")
        self.data = d

    @property
    def shape(self):
        return self.data.shape

    @property
    def peak(self):
        return 255.0 if self.bit_depth == 8 else 65535.0


def _pgm_tokens(raw, count):
    """Parse ``count`` whitespace-separated header tokens after the magic."""
    tokens, i, n = [], 2, len(raw)
    while len(tokens) < count:
        while i < n and raw[i:i + 1].isspace():
            i += 1
        if i < n and raw[i:i + 1] == b"#":
            while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise DataError("malformed PGM header")
        tokens.append(raw[i:j])
        i = j
    if i >= n or not raw[i:i + 1].isspace():
        raise DataError("malformed PGM header")
    return tokens, i + 1


def _read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5)")
    try:
        (w, h, maxval), offset = _pgm_tokens(raw, 3)
        W, H, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if W <= 0 or H <= 0 or not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = W * H * dtype.itemsize
    payload = raw[offset:offset + need]
    if len(payload) < need:
        raise DataError(f"{path}: truncated PGM payload")
    data = np.frombuffer(payload, dtype=dtype).reshape(H, W).astype(float)
    return ImageBuffer(data, 16 if maxval > 255 else 8, str(path))


def _read_png(path):
    from PIL import Image
    with Image.open(path) as im:
        mode = im.mode
        if mode == "L":
            depth = 8
        elif mode in ("I;16", "I;16B", "I"):
            depth = 16
        else:
            raise DataError(f"{path}: unsupported PNG mode {mode!r} (grayscale only)")
        data = np.asarray(im, dtype=float)
    return ImageBuffer(data, depth, str(path))


def read_image(path) -> ImageBuffer:
    """Read a P5 PGM or grayscale PNG (8 or 16 bit)."""
    path = str(path)
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P5":
        return _read_pgm(path)
    if magic == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise DataError(f"{path}: unsupported image format")


def quantize(data, bit_depth=8):
    """Clamp to the integer range and round half to even."""
    data = np.asarray(data, dtype=float)
    if not np.all(np.isfinite(data)):
        raise DataError("cannot write non-finite intensities")
    if np.any(data < 0):
        warnings.warn("negative intensities clamped to 0", RuntimeWarning, stacklevel=3)
    peak = 255 if bit_depth == 8 else 65535
    return np.clip(np.rint(data), 0, peak).astype(np.uint8 if bit_depth == 8 else np.uint16)


def write_image(buf, path, bit_depth=None):
    """Write a PGM (``.pgm``) or PNG (anything else); returns the path."""
    if isinstance(buf, ImageBuffer):
        data, depth = buf.data, bit_depth or buf.bit_depth
    else:
        data, depth = np.asarray(buf, dtype=float), bit_depth or 8
    if depth not in (8, 16):
        raise ConfigError("bit depth must be 8 or 16")
    q = quantize(data, depth)
    path = str(path)
    if path.lower().endswith(".pgm"):
        H, W = q.shape
        header = f"P5\n{W} {H}\n{255 if depth == 8 else 65535}\n".encode()
        body = q.astype(">u2").tobytes() if depth == 16 else q.tobytes()
        with open(path, "wb") as fh:
            fh.write(header + body)
    else:
        from PIL import Image
        if depth == 8:
            Image.fromarray(q, mode="L").save(path)
        else:
            Image.fromarray(q.astype(np.uint16)).save(path)
    return path


_IMAGE_EXT = (".pgm", ".png")


def list_sequence(source):
    """Lexicographically sorted frame paths from a directory or glob."""
    source = str(source)
    if os.path.isdir(source):
        paths = [os.path.join(source, p) for p in os.listdir(source)
                 if p.lower().endswith(_IMAGE_EXT)]
    else:
        paths = glob.glob(source)
    paths = sorted(paths)
    if not paths:
        raise DataError(f"no frames found at {source}")
    return paths


def read_sequence(source, threads=None) -> np.ndarray:
    """Load frames as a (K, H, W) float array from ``.npy``, a directory or a glob."""
    from ._parallel import parallel_map
    source = str(source)
    if source.endswith(".npy"):
        if not os.path.exists(source):
            raise DataError(f"{source}: no such file")
        arr = np.load(source).astype(float)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise DataError("sequence array must be (K, H, W)")
        return arr
    bufs = parallel_map(read_image, list_sequence(source), threads)
    shapes = {b.shape for b in bufs}
    if len(shapes) != 1:
        raise DataError(f"frames differ in size: {sorted(shapes)}")
    return np.stack([b.data for b in bufs])


def write_sequence(frames, directory, bit_depth=16, prefix="frame", ext=".png"):
    os.makedirs(directory, exist_ok=True)
    K = len(frames)
    width = max(4, len(str(K - 1)))
    paths = []
    for k, f in enumerate(frames):
        paths.append(write_image(f, os.path.join(directory, f"{prefix}_{k:0{width}d}{ext}"),
                                 bit_depth))
    return paths


def _parse_value(text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config_text(text, source="<config>"):
    """Parse config text into ``(OpticalConfig, Cn2Profile | None, options)``."""
    values, options = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("option."):
            options[key[len("option."):]] = _parse_value(val)
            continue
        if key not in _OPTICS_KEYS and key not in _CN2_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = int(val) if key == "cn2_level" else float(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key} needs a number") from exc
    missing = [k for k in _OPTICS_KEYS[:5] if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys {missing}")
    cfg = OpticalConfig(**{k: values[k] for k in _OPTICS_KEYS if k in values})
    return cfg, profile_from_values(values), options


def profile_from_values(values):
    given = [k for k in ("cn2", "cn2_level") if k in values]
    linear = [k for k in ("cn2_source", "cn2_camera") if k in values]
    if len(given) + bool(linear) > 1:
        raise ConfigError("specify only one of cn2, cn2_level or cn2_source/cn2_camera")
    if linear:
        if len(linear) != 2:
            raise ConfigError("linear profile needs both cn2_source and cn2_camera")
        return Cn2Profile.linear(values["cn2_source"], values["cn2_camera"])
    if "cn2_level" in values:
        lvl = int(values["cn2_level"])
        if lvl not in LEVELS:
            raise ConfigError("cn2_level must be 1..6")
        return Cn2Profile.constant(LEVELS[lvl])
    if "cn2" in values:
        return Cn2Profile.constant(values["cn2"])
    return None


def load_config(path):
    """Read a config file; returns ``(OpticalConfig, Cn2Profile | None, options)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(cfg: OpticalConfig, profile: Cn2Profile | None = None, options=None) -> str:
    """Serialize so that ``parse_config_text(dump_config(...))`` reproduces the inputs."""
    lines = [
        f"aperture_diameter = {cfg.aperture_diameter!r}  # m",
        f"focal_length = {cfg.focal_length!r}  # m",
        f"wavelength = {cfg.wavelength!r}  # m",
        f"path_length = {cfg.path_length!r}  # m",
        f"pixel_pitch = {cfg.pixel_pitch!r}  # m",
    ]
    if profile is not None:
        if profile.kind == "constant":
            lines.append(f"cn2 = {float(profile.values[0])!r}  # m^(-2/3)")
        elif profile.kind == "linear":
            lines.append(f"cn2_source = {float(profile.values[0])!r}  # m^(-2/3)")
            lines.append(f"cn2_camera = {float(profile.values[1])!r}  # m^(-2/3)")
        else:
            raise ConfigError("only constant and linear profiles can be written")
    for k, v in (options or {}).items():
        lines.append(f"option.{k} = {v}")
    return "\n".join(lines) + "\n"


def table1_text() -> str:
    from .stats import table1_config
    return dump_config(table1_config())


def is_close_config(a: OpticalConfig, b: OpticalConfig, rtol=1e-12):
    return all(math.isclose(getattr(a, k), getattr(b, k), rel_tol=rtol)
               for k in _OPTICS_KEYS[:5])
