"""Local smoothness penalties and their gradients.

Four penalties share one interface: total variation (TV), anisotropic TV
(ATV), reweighted anisotropic TV (RwATV) and the q-generalized Gaussian
Markov random field (qGGMRF). Differences are forward differences with a
replicate boundary, so the last row / column contributes zero derivative.

``axis 0`` (rows, vertical) is the derivative weighted by ``a``; ``axis 1``
(columns, horizontal) is weighted by ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "RegularizerParams",
    "WeightField",
    "tv_value",
    "atv_value",
    "rwatv_update_weights",
    "rwatv_value",
    "qggmrf_potential",
    "qggmrf_value",
    "regularizer_value",
    "regularizer_gradient",
    "descent_step",
    "KINDS",
]

KINDS = ("tv", "atv", "rwatv", "qggmrf")
EPS = 1e-8
_DIAG = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class RegularizerParams:
    kind: str = "tv"
    a: float = 1.0
    b: float = 1.0
    epsilon: float = EPS
    p: float = 2.0
    q: float = 1.0
    c: float = 0.0625
    lambda_weight: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {KINDS}")
        if self.a < 0 or self.b < 0:
            raise ValueError("anisotropy weights a, b must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (1.0 <= self.q <= self.p <= 2.0):
            raise ValueError(f"qGGMRF needs 1 <= q <= p <= 2, got p={self.p}, q={self.q}")
        if not self.c > 0:
            raise ValueError("qGGMRF scale c must be positive")
        if self.lambda_weight < 0:
            raise ValueError("lambda_weight must be non-negative")


@dataclass(frozen=True)
class WeightField:
    """Per-pixel RwATV weights computed from the previous outer iterate."""

    weights: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("RwATV weights must be positive and finite")
        object.__setattr__(self, "weights", w)


def _diffs(f):
    f = np.asarray(f, dtype=np.float64)
    dx = np.zeros_like(f)
    dy = np.zeros_like(f)
    dx[:-1, :] = f[1:, :] - f[:-1, :]
    dy[:, :-1] = f[:, 1:] - f[:, :-1]
    return dx, dy


def _diffs_adjoint(px, py):
    # transpose of _diffs applied to (px, py); entries on the clamped edge are ignored
    out = np.zeros_like(px)
    out[:-1, :] -= px[:-1, :]
    out[1:, :] += px[:-1, :]
    out[:, :-1] -= py[:, :-1]
    out[:, 1:] += py[:, :-1]
    return out


def _anisotropic_magnitude(f, a, b, smooth=0.0):
    dx, dy = _diffs(f)
    return np.sqrt(a * dx * dx + b * dy * dy + smooth), dx, dy


def tv_value(f) -> float:
    """Isotropic TV: sum of forward-difference gradient magnitudes."""
    return atv_value(f, RegularizerParams("atv"))


def atv_value(f, params: RegularizerParams) -> float:
    mag, _, _ = _anisotropic_magnitude(f, params.a, params.b)
    return float(mag.sum())


def rwatv_update_weights(f_prev, params: RegularizerParams, iteration: int = 0) -> WeightField:
    """``r = 1 / (|grad_ab f_prev| + eps)``."""
    mag, _, _ = _anisotropic_magnitude(f_prev, params.a, params.b)
    return WeightField(1.0 / (mag + params.epsilon), iteration)


def rwatv_value(f, w: WeightField, params: RegularizerParams) -> float:
    f = np.asarray(f, dtype=np.float64)
    if w.weights.shape != f.shape:
        raise ValueError(f"weight field {w.weights.shape} does not match image {f.shape}")
    mag, _, _ = _anisotropic_magnitude(f, params.a, params.b)
    return float((w.weights * mag).sum())


def _check_qggmrf(params: RegularizerParams):
    if not (1.0 <= params.q <= params.p <= 2.0) or not params.c > 0:
        raise ValueError("invalid qGGMRF parameters")


def qggmrf_potential(delta, params: RegularizerParams):
    """``rho(d) = |d|^p / (1 + |d / c|^(p - q))``; works on scalars and arrays."""
    _check_qggmrf(params)
    ad = np.abs(np.asarray(delta, dtype=np.float64))
    rho = ad**params.p / (1.0 + (ad / params.c) ** (params.p - params.q))
    return float(rho) if rho.ndim == 0 else rho


def _qggmrf_derivative(delta, params):
    ad = np.abs(delta)
    u = (ad / params.c) ** (params.p - params.q)
    return np.sign(delta) * ad ** (params.p - 1.0) * (params.p + params.q * u) / (1.0 + u) ** 2


def _cliques(f):
    # (difference, weight, source slice, neighbour slice) per clique family;
    # each unordered 8-neighbour pair appears exactly once
    return (
        (f[:, :-1] - f[:, 1:], 1.0, (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        (f[:-1, :] - f[1:, :], 1.0, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        (f[:-1, :-1] - f[1:, 1:], _DIAG, (slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None))),
        (f[:-1, 1:] - f[1:, :-1], _DIAG, (slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))),
    )


def qggmrf_value(f, params: RegularizerParams) -> float:
    _check_qggmrf(params)
    f = np.asarray(f, dtype=np.float64)
    return float(sum(w * qggmrf_potential(d, params).sum() for d, w, _, _ in _cliques(f)))


def regularizer_value(f, params: RegularizerParams, w: WeightField | None = None) -> float:
    kind = params.kind
    if kind == "tv":
        return tv_value(f)
    if kind == "atv":
        return atv_value(f, params)
    if kind == "rwatv":
        if w is None:
            raise ValueError("RwATV needs a weight field")
        return rwatv_value(f, w, params)
    return qggmrf_value(f, params)


def regularizer_gradient(f, params: RegularizerParams, w: WeightField | None = None) -> np.ndarray:
    """Gradient of the selected penalty.

    TV-type magnitudes are smoothed as ``sqrt(. + epsilon)`` so the gradient is
    defined on flat patches.
    """
    f = np.asarray(f, dtype=np.float64)
    kind = params.kind
    if kind == "qggmrf":
        grad = np.zeros_like(f)
        for d, weight, src, nbr in _cliques(f):
            g = weight * _qggmrf_derivative(d, params)
            grad[src] += g
            grad[nbr] -= g
        return grad

    if kind == "tv":
        a = b = 1.0
    else:
        a, b = params.a, params.b
    weights = None
    if kind == "rwatv":
        if w is None:
            raise ValueError("RwATV gradient needs a weight field")
        if w.weights.shape != f.shape:
            raise ValueError("weight field does not match image")
        weights = w.weights
    if f.ndim == 2 and min(f.shape) >= 2:
        out = np.empty_like(f)
        ones = weights is None
        _tv_grad_kernel(np.ascontiguousarray(f), float(a), float(b), float(params.epsilon),
                        f if ones else np.ascontiguousarray(weights), ones, out)
        return out
    return _tv_grad_numpy(f, a, b, params.epsilon, weights)


def _tv_grad_numpy(f, a, b, eps, weights=None):
    mag, dx, dy = _anisotropic_magnitude(f, a, b, smooth=eps)
    scale = 1.0 / mag if weights is None else weights / mag
    return _diffs_adjoint(a * dx * scale, b * dy * scale)


@njit(cache=True)
def _tv_grad_kernel(f, a, b, eps, w, ones, out):
    # fused form of _tv_grad_numpy: scatter each pixel's flux to itself and its
    # lower / right neighbours
    h, wd = f.shape
    out[:, :] = 0.0
    for i in range(h):
        for j in range(wd):
            dx = f[i + 1, j] - f[i, j] if i + 1 < h else 0.0
            dy = f[i, j + 1] - f[i, j] if j + 1 < wd else 0.0
            s = 1.0 / math.sqrt(a * dx * dx + b * dy * dy + eps)
            if not ones:
                s *= w[i, j]
            if i + 1 < h:
                px = a * dx * s
                out[i, j] -= px
                out[i + 1, j] += px
            if j + 1 < wd:
                py = b * dy * s
                out[i, j] -= py
                out[i, j + 1] += py


def default_step_scale(f) -> float:
    """One hundredth of the image's dynamic range (1e-2 for a flat image)."""
    span = float(np.max(f) - np.min(f)) if np.size(f) else 0.0
    return (span if span > 0 else 1.0) / 100.0


def descent_step(
    f,
    params: RegularizerParams,
    beta: float,
    n_g: int,
    step_scale: float | None = None,
    weights: WeightField | None = None,
) -> np.ndarray:
    """Run ``n_g`` normalised-gradient descent steps on the penalty.

    Each step is ``f -= beta * step_scale * grad R / (||grad R||_2 + eps)``,
    so ``beta * step_scale`` is the Euclidean length of one step. ``step_scale`` defaults to
    :func:`default_step_scale` evaluated once on the input. For RwATV the weight
    field is built from the input once per call unless one is supplied.
    """
    if beta < 0 or n_g < 0:
        raise ValueError("beta and n_g must be non-negative")
    f = np.array(f, dtype=np.float64)
    if beta == 0 or n_g == 0:
        return f
    if step_scale is None:
        step_scale = default_step_scale(f)
    if params.kind == "rwatv" and weights is None:
        weights = rwatv_update_weights(f, params)
    length = beta * step_scale
    for _ in range(n_g):
        g = regularizer_gradient(f, params, weights)
        f -= length * g / (np.linalg.norm(g) + params.epsilon)
    return f
