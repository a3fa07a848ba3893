"""Parallel-beam acquisition model and matrix-free projector pair.

Conventions
-----------
Images are 2-D float arrays indexed ``f[row, col]``. Pixel centres sit at
``x = (col - (N-1)/2) * pixel_pitch`` and ``y = ((N-1)/2 - row) * pixel_pitch``,
so row 0 is the top of the picture and ``y`` points up.

A projection angle ``theta`` (degrees) is the direction of the line-set
normal, measured counterclockwise from +x. Detector coordinate is
``s = x cos(theta) + y sin(theta)``, so at 0 degrees the rays run vertically
and each bin sums image columns.

The pixel basis is the square indicator of each pixel. A detector bin
reports the mean of the exact line integrals across its aperture, i.e. the
integral of the pixel's trapezoidal footprint over the bin divided by the
bin width. This keeps the mass of each view exact (sum over bins times
detector pitch equals the image integral) and makes the forward and back
projections share one weight routine, so the adjoint is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "Geometry",
    "GeometryError",
    "forward_project",
    "back_project",
    "operator_norm_estimate",
    "row_sums",
    "column_sums",
]


class GeometryError(ValueError):
    """Raised on invalid geometry or mismatched image / sinogram shapes."""


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam scan of a square ``image_size`` x ``image_size`` grid.

    ``detector_count`` defaults to ``ceil(sqrt(2) * image_size)`` so the
    detector spans the grid diagonal.
    """

    image_size: int
    angles: tuple[float, ...]
    detector_count: int | None = None
    pixel_pitch: float = 1.0
    detector_pitch: float = 1.0
    _trig: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(np.asarray(self.angles, dtype=float)))
        object.__setattr__(self, "angles", angles)
        if int(self.image_size) != self.image_size or self.image_size < 1:
            raise GeometryError(f"image_size must be a positive integer, got {self.image_size}")
        object.__setattr__(self, "image_size", int(self.image_size))
        if self.detector_count is None:
            object.__setattr__(self, "detector_count", math.ceil(math.sqrt(2.0) * self.image_size))
        if int(self.detector_count) != self.detector_count or self.detector_count < 1:
            raise GeometryError(f"detector_count must be a positive integer, got {self.detector_count}")
        object.__setattr__(self, "detector_count", int(self.detector_count))
        if not angles:
            raise GeometryError("at least one projection angle is required")
        if not all(math.isfinite(a) and 0.0 <= a < 360.0 for a in angles):
            raise GeometryError("angles must lie in [0, 360) degrees")
        if len(set(angles)) != len(angles):
            raise GeometryError("duplicate projection angles")
        if not (self.pixel_pitch > 0 and self.detector_pitch > 0):
            raise GeometryError("pixel_pitch and detector_pitch must be positive")

        rad = np.deg2rad(np.asarray(angles))
        cos, sin = np.cos(rad), np.sin(rad)
        # snap round-off at multiples of 90 degrees so footprints degenerate to boxes
        cos[np.abs(cos) < 1e-12] = 0.0
        sin[np.abs(sin) < 1e-12] = 0.0
        cos.setflags(write=False)
        sin.setflags(write=False)
        object.__setattr__(self, "_trig", (cos, sin))

    @classmethod
    def uniform(cls, image_size, n_views, start=0.0, stop=180.0, **kw):
        """``n_views`` equally spaced angles on ``[start, stop)``."""
        angles = np.linspace(start, stop, int(n_views), endpoint=False)
        return cls(image_size, tuple(np.mod(angles, 360.0)), **kw)

    @classmethod
    def limited_angle(cls, image_size, start, stop, step=1.0, **kw):
        """One view every ``step`` degrees on ``[start, stop)``."""
        if not stop > start:
            raise GeometryError("limited-angle range needs start < stop")
        angles = np.arange(start, stop, step, dtype=float)
        return cls(image_size, tuple(np.mod(angles, 360.0)), **kw)

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_size, self.image_size)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.detector_count)

    def scaled(self, factor: float) -> "Geometry":
        """Same scan with every length multiplied by ``factor``."""
        return Geometry(
            self.image_size,
            self.angles,
            self.detector_count,
            self.pixel_pitch * factor,
            self.detector_pitch * factor,
        )


# -- kernels -----------------------------------------------------------------


@njit(cache=True, fastmath=True, inline="always")
def _footprint_cdf(t, a, b, h, w2):
    # cumulative integral of a trapezoid centred at 0: plateau |t| <= a of
    # height h, linear ramps of width w2 = b - a on each side
    if t <= -b:
        return 0.0
    if t < -a:
        d = t + b
        return 0.5 * h * d * d / w2
    if t <= a:
        return h * (0.5 * w2 + t + a)
    total = h * (2.0 * a + w2)
    if t < b:
        d = b - t
        return total - 0.5 * h * d * d / w2
    return total


@njit(cache=True, fastmath=True)
def _view_params(c, s, pitch):
    ac = abs(c)
    as_ = abs(s)
    w1 = pitch * max(ac, as_)
    w2 = pitch * min(ac, as_)
    a = 0.5 * (w1 - w2)
    b = 0.5 * (w1 + w2)
    h = pitch * pitch / w1
    return a, b, h, w2


def _padding(geom: "Geometry") -> int:
    # extra bins on each side so every pixel footprint lands inside the buffer
    reach = (0.5 * math.sqrt(2.0) * geom.image_size * geom.pixel_pitch) / geom.detector_pitch
    return max(0, int(math.ceil(reach - 0.5 * geom.detector_count))) + 3


@njit(cache=True, fastmath=True)
def _forward_kernel(f, cos, sin, pitch, dpitch, n_det, pad, out):
    # out has n_det + 2 * pad columns; bin k of the detector is column k + pad
    n = f.shape[0]
    half = 0.5 * (n - 1)
    edge0 = -(0.5 * n_det + pad) * dpitch
    inv_dp = 1.0 / dpitch
    for ia in range(cos.shape[0]):
        c = cos[ia]
        s = sin[ia]
        a, b, h, w2 = _view_params(c, s, pitch)
        total = h * (2.0 * a + w2)
        narrow = b <= dpitch
        step = pitch * c
        for i in range(n):
            u0 = (half - i) * pitch * s - half * step
            for j in range(n):
                v = f[i, j]
                if v == 0.0:
                    continue
                u = u0 + j * step
                # padding keeps the argument positive, so truncation is floor
                k = int((u - b - edge0) * inv_dp)
                t1 = edge0 + (k + 1) * dpitch - u
                if narrow:
                    c1 = _footprint_cdf(t1, a, b, h, w2)
                    c2 = _footprint_cdf(t1 + dpitch, a, b, h, w2)
                    v *= inv_dp
                    out[ia, k] += v * c1
                    out[ia, k + 1] += v * (c2 - c1)
                    out[ia, k + 2] += v * (total - c2)
                else:
                    k_hi = int((u + b - edge0) * inv_dp)
                    prev = 0.0
                    while k <= k_hi:
                        cur = _footprint_cdf(edge0 + (k + 1) * dpitch - u, a, b, h, w2)
                        out[ia, k] += v * (cur - prev) * inv_dp
                        prev = cur
                        k += 1


@njit(cache=True, fastmath=True)
def _back_kernel(g, n, cos, sin, pitch, dpitch, pad, out):
    # g is the zero-padded sinogram, same layout as the forward buffer
    n_det = g.shape[1] - 2 * pad
    half = 0.5 * (n - 1)
    edge0 = -(0.5 * n_det + pad) * dpitch
    inv_dp = 1.0 / dpitch
    for ia in range(cos.shape[0]):
        c = cos[ia]
        s = sin[ia]
        a, b, h, w2 = _view_params(c, s, pitch)
        total = h * (2.0 * a + w2)
        narrow = b <= dpitch
        row = g[ia]
        step = pitch * c
        for i in range(n):
            u0 = (half - i) * pitch * s - half * step
            for j in range(n):
                u = u0 + j * step
                k = int((u - b - edge0) * inv_dp)
                t1 = edge0 + (k + 1) * dpitch - u
                if narrow:
                    c1 = _footprint_cdf(t1, a, b, h, w2)
                    c2 = _footprint_cdf(t1 + dpitch, a, b, h, w2)
                    acc = row[k] * c1 + row[k + 1] * (c2 - c1) + row[k + 2] * (total - c2)
                    out[i, j] += acc * inv_dp
                else:
                    k_hi = int((u + b - edge0) * inv_dp)
                    acc = 0.0
                    prev = 0.0
                    while k <= k_hi:
                        cur = _footprint_cdf(edge0 + (k + 1) * dpitch - u, a, b, h, w2)
                        acc += row[k] * (cur - prev)
                        prev = cur
                        k += 1
                    out[i, j] += acc * inv_dp


# -- public operations ----------------------------------------------------------


def _check_image(f, geom: Geometry) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != geom.image_shape:
        raise GeometryError(f"image shape {f.shape} does not match geometry {geom.image_shape}")
    if not np.all(np.isfinite(f)):
        raise GeometryError("image contains non-finite pixels")
    return np.ascontiguousarray(f)


def _check_sinogram(g, geom: Geometry) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != geom.sinogram_shape:
        raise GeometryError(f"sinogram shape {g.shape} does not match geometry {geom.sinogram_shape}")
    if not np.all(np.isfinite(g)):
        raise GeometryError("sinogram contains non-finite values")
    return np.ascontiguousarray(g)


def forward_project(f, geom: Geometry) -> np.ndarray:
    """Apply H: image ``(N, N)`` -> sinogram ``(n_angles, detector_count)``."""
    f = _check_image(f, geom)
    pad = _padding(geom)
    buf = np.zeros((geom.n_angles, geom.detector_count + 2 * pad))
    cos, sin = geom._trig
    _forward_kernel(f, cos, sin, geom.pixel_pitch, geom.detector_pitch, geom.detector_count, pad, buf)
    # rays outside the detector are discarded
    return np.ascontiguousarray(buf[:, pad : pad + geom.detector_count])


def back_project(g, geom: Geometry) -> np.ndarray:
    """Apply the exact transpose of :func:`forward_project`."""
    g = _check_sinogram(g, geom)
    pad = _padding(geom)
    buf = np.zeros((geom.n_angles, geom.detector_count + 2 * pad))
    buf[:, pad : pad + geom.detector_count] = g
    out = np.zeros(geom.image_shape)
    cos, sin = geom._trig
    _back_kernel(buf, geom.image_size, cos, sin, geom.pixel_pitch, geom.detector_pitch, pad, out)
    return out


def row_sums(geom: Geometry) -> np.ndarray:
    """``H 1``: total weight of each (angle, bin) ray."""
    return forward_project(np.ones(geom.image_shape), geom)


def column_sums(geom: Geometry) -> np.ndarray:
    """``H^T 1``: total weight each pixel receives over all rays."""
    return back_project(np.ones(geom.sinogram_shape), geom)


def operator_norm_estimate(geom: Geometry, iters: int = 30, seed: int = 0) -> float:
    """Power-iteration estimate of the largest singular value of H.

    Each iterate is ``||H^T H x_k|| / ||x_k||`` on a normalised chain, which is
    non-decreasing in ``iters`` for a fixed starting vector.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.random.default_rng(seed).random(geom.image_shape) + 0.5
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = back_project(forward_project(x, geom), geom)
        lam = np.linalg.norm(y)
        if lam == 0.0:
            return 0.0
        x = y / lam
    return math.sqrt(lam)
