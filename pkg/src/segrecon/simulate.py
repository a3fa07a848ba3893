"""Phantoms, grayscale image files and low-dose sinogram noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

__all__ = [
    "PhantomSpec",
    "NoiseSpec",
    "ImageFormatError",
    "LoadedImage",
    "SHEPP_LOGAN",
    "make_phantom",
    "ellipse_value_at",
    "load_grayscale",
    "save_pgm",
    "save_raw",
    "save_image",
    "save_preview",
    "simulate_lowdose",
]

# x0, y0, semi-axis a, semi-axis b, rotation (deg), classical density, modified density
SHEPP_LOGAN = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98, -0.8),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02, -0.2),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02, -0.2),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01, 0.1),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01, 0.1),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01, 0.1),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01, 0.1),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01, 0.1),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01, 0.1),
)

PHANTOM_KINDS = ("shepp_logan", "disk", "custom_ellipses")


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic test object on a ``size`` x ``size`` grid covering ``[-1, 1]^2``.

    ``radius`` is the disk radius in pixels. ``ellipses`` holds
    ``(x0, y0, a, b, angle_deg, density)`` tuples in normalised coordinates.
    """

    kind: str = "shepp_logan"
    size: int = 256
    radius: float = 0.0
    ellipses: tuple = field(default_factory=tuple)
    modified: bool = False

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {PHANTOM_KINDS}")
        if int(self.size) != self.size or self.size < 16:
            raise ValueError(f"phantom size must be an integer >= 16, got {self.size}")
        if self.kind == "disk" and not (self.radius >= 0 and math.isfinite(self.radius)):
            raise ValueError("disk radius must be finite and non-negative")
        for e in self.ellipses:
            if len(e) != 6 or not all(math.isfinite(v) for v in e):
                raise ValueError(f"ellipse needs six finite numbers, got {e!r}")
            if e[2] <= 0 or e[3] <= 0:
                raise ValueError("ellipse semi-axes must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    i0: float
    seed: int = 0

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError("blank-scan count i0 must be positive")


def _pixel_coords(size):
    c = (np.arange(size) - 0.5 * (size - 1)) * (2.0 / size)
    x = c[None, :]
    y = -c[:, None]
    return x, y


def _ellipse_mask(x, y, x0, y0, a, b, angle_deg):
    t = math.radians(angle_deg)
    ct, st = math.cos(t), math.sin(t)
    dx, dy = x - x0, y - y0
    xr = dx * ct + dy * st
    yr = -dx * st + dy * ct
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _ellipse_table(spec: PhantomSpec):
    if spec.kind == "shepp_logan":
        col = 6 if spec.modified else 5
        return [(e[0], e[1], e[2], e[3], e[4], e[col]) for e in SHEPP_LOGAN]
    return list(spec.ellipses)


def ellipse_value_at(x, y, ellipses) -> float:
    """Sum of densities of the ellipses containing the point ``(x, y)``."""
    return float(sum(d for (x0, y0, a, b, ang, d) in ellipses if _ellipse_mask(x, y, x0, y0, a, b, ang)))


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Evaluate the phantom at pixel centres; negative sums are clamped to 0."""
    n = int(spec.size)
    if spec.kind == "disk":
        r = (np.arange(n) - 0.5 * (n - 1))
        dist2 = r[None, :] ** 2 + r[:, None] ** 2
        return (dist2 < spec.radius**2).astype(np.float64)
    x, y = _pixel_coords(n)
    img = np.zeros((n, n))
    for x0, y0, a, b, ang, d in _ellipse_table(spec):
        img[_ellipse_mask(x, y, x0, y0, a, b, ang)] += d
    return np.maximum(img, 0.0)


# -- image files ---------------------------------------------------------------


class ImageFormatError(ValueError):
    pass


class LoadedImage(NamedTuple):
    data: np.ndarray
    meta: dict


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".hdr")


def _read_pgm(path: Path) -> LoadedImage:
    raw = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: only binary (P5) PGM is supported")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad PGM dimensions or maxval")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    if len(raw) - pos < count * dtype.itemsize:
        raise ImageFormatError(f"{path}: PGM pixel data truncated")
    pix = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(height, width)
    data = pix.astype(np.float64) / maxval
    bits = 16 if maxval > 255 else 8
    return LoadedImage(data, {"format": "pgm", "bit_depth": bits, "width": width, "height": height, "maxval": maxval})


def _read_header(path: Path) -> dict:
    meta: dict = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        meta[key.strip().lower()] = value.strip()
    return meta


def _read_raw(path: Path) -> LoadedImage:
    hdr = _sidecar(path)
    if not hdr.exists():
        raise ImageFormatError(f"{path}: missing header sidecar {hdr.name}")
    meta = _read_header(hdr)
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, ValueError) as exc:
        raise ImageFormatError(f"{hdr}: header needs integer width and height") from exc
    raw = path.read_bytes()
    if len(raw) != 4 * width * height:
        raise ImageFormatError(f"{path}: expected {4 * width * height} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ImageFormatError(f"{path}: non-finite values")
    meta.update({"format": "raw", "bit_depth": 32, "width": width, "height": height})
    return LoadedImage(data, meta)


def load_grayscale(path) -> LoadedImage:
    """Read a binary PGM (8/16-bit, scaled to ``[0, 1]``) or raw float32 image.

    Raw files are little-endian float32 with a ``.hdr`` text sidecar holding
    ``width`` and ``height`` lines; their values are returned unscaled.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".raw":
        return _read_raw(path)
    raise ImageFormatError(f"{path}: unsupported format {suffix!r} (use .pgm or .raw)")


def save_pgm(path, data, bit_depth: int = 8, window=None):
    """Write ``data`` as binary PGM, mapping ``window`` (default min..max) to full scale."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = (float(data.min()), float(data.max())) if window is None else window
    maxval = 255 if bit_depth == 8 else 65535
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    scaled = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    pix = np.round(np.clip(scaled, 0.0, 1.0) * maxval)
    pix = pix.astype(">u2" if bit_depth == 16 else np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(pix.tobytes())


def save_raw(path, data, **extra):
    """Write float32 little-endian pixels plus the ``.hdr`` sidecar."""
    path = Path(path)
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape
    path.write_bytes(data.astype("<f4").tobytes())
    lines = [f"width {w}", f"height {h}", "dtype float32-le"]
    lines += [f"{k} {v}" for k, v in extra.items()]
    _sidecar(path).write_text("\n".join(lines) + "\n")


def save_image(path, data, **extra):
    """Dispatch on suffix: ``.raw`` keeps values, ``.pgm`` writes an 8-bit preview."""
    path = Path(path)
    if path.suffix.lower() == ".raw":
        save_raw(path, data, **extra)
    elif path.suffix.lower() == ".pgm":
        save_pgm(path, data)
    else:
        raise ImageFormatError(f"{path}: unsupported output format")


def save_preview(path, data, window=None):
    save_pgm(path, data, 8, window)


# -- noise -----------------------------------------------------------------------


def simulate_lowdose(g, noise: NoiseSpec) -> np.ndarray:
    """Poisson counting noise on line integrals.

    Expected counts are ``I0 * exp(-g)``; counts are drawn per bin and
    converted back with ``-ln(max(Y, 1) / I0)``.
    """
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("sinogram contains non-finite values")
    expected = noise.i0 * np.exp(-g)
    rng = np.random.Generator(np.random.Philox(noise.seed))
    counts = rng.poisson(expected).astype(np.float64)
    return -np.log(np.maximum(counts, 1.0) / noise.i0)
