"""Iterative reconstruction loop combining data, local and global constraints.

Each outer iteration ``i = 1 .. n_iter`` runs, in order: one simultaneous
data-consistency update, positivity clipping, ``n_g`` descent steps on the
local penalty, and (when scheduled) the gray-level segmentation step.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import regularizers as reg
from .config import ReconConfig
from .geometry import (
    Geometry,
    _check_image,
    _check_sinogram,
    back_project,
    column_sums,
    forward_project,
    operator_norm_estimate,
    row_sums,
)
from .globalseg import apply_global_constraint
from .metrics import snr_db

__all__ = [
    "DivergenceError",
    "IterationRecord",
    "sirt_step",
    "enforce_positivity",
    "reconstruct",
    "run_schedule_preview",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual_norm: float
    update_magnitude: float
    snr_db: float | None = None
    n_groups: int | None = None


def sirt_step(f, g, geom: Geometry, alpha: float) -> np.ndarray:
    """``f + alpha * H^T (g - H f)`` with no clipping."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    f = _check_image(f, geom)
    g = _check_sinogram(g, geom)
    out = f + alpha * back_project(g - forward_project(f, geom), geom)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("data step produced non-finite pixels")
    return out


def enforce_positivity(f) -> np.ndarray:
    return np.maximum(np.asarray(f, dtype=np.float64), 0.0)


def run_schedule_preview(cfg: ReconConfig) -> list[tuple[int, int]]:
    """``(iteration, n_groups)`` for every iteration at which the global step fires."""
    return [(i, cfg.groups_at(i)) for i in range(cfg.n_c, cfg.n_iter + 1, cfg.n_c) if cfg.fires_at(i)]


class _DataStep:
    """Data update with the normalisation chosen by ``cfg.step_rule``."""

    def __init__(self, g, geom, cfg):
        self.g = g
        self.geom = geom
        self.alpha = cfg.alpha
        self.sirt = cfg.step_rule == "sirt"
        if self.sirt:
            rs = row_sums(geom)
            cs = column_sums(geom)
            self.inv_rows = np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)
            self.inv_cols = np.divide(1.0, cs, out=np.zeros_like(cs), where=cs > 0)
        else:
            sigma = operator_norm_estimate(geom, iters=20)
            if sigma > 0 and cfg.alpha >= 2.0 / sigma**2:
                warnings.warn(
                    f"alpha={cfg.alpha:g} exceeds the Landweber bound 2/sigma^2={2.0 / sigma**2:.3g}",
                    RuntimeWarning,
                    stacklevel=3,
                )

    def residual(self, f):
        return self.g - forward_project(f, self.geom)

    def __call__(self, f, r):
        if self.sirt:
            return f + self.alpha * self.inv_cols * back_project(r * self.inv_rows, self.geom)
        return f + self.alpha * back_project(r, self.geom)


def reconstruct(g, geom: Geometry, cfg: ReconConfig, ground_truth=None, callback=None):
    """Run ``cfg.n_iter`` outer iterations from an all-zero image.

    Returns ``(image, records)`` with one :class:`IterationRecord` per
    iteration; ``residual_norm`` and ``snr_db`` describe the iterate leaving
    that iteration. ``callback(i, f)``, if given, runs after each iteration.
    """
    if not isinstance(cfg, ReconConfig):
        raise TypeError("cfg must be a ReconConfig")
    g = _check_sinogram(g, geom)
    truth = None if ground_truth is None else _check_image(ground_truth, geom)

    f = np.zeros(geom.image_shape)
    records: list[IterationRecord] = []
    if cfg.n_iter == 0:
        return f, records

    data = _DataStep(g, geom, cfg)
    params = cfg.regularizer
    beta_global = cfg.effective_global_beta
    initial = float(np.linalg.norm(g))
    limit = DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny)
    pending = None

    def _close(pending, r):
        # the residual computed before the next data step belongs to the previous iterate
        res_norm = float(np.linalg.norm(r))
        if not math.isfinite(res_norm) or res_norm > limit:
            raise DivergenceError(
                f"residual {res_norm:.3g} after iteration {pending['iteration']} "
                f"exceeds {DIVERGENCE_FACTOR:g} x initial {initial:.3g}"
            )
        records.append(IterationRecord(residual_norm=res_norm, **pending))

    r = data.residual(f)
    for i in range(1, cfg.n_iter + 1):
        if pending is not None:
            _close(pending, r)
        prev = f
        f = data(f, r)
        f = enforce_positivity(f)

        if cfg.n_g > 0 and cfg.beta > 0:
            weights = reg.rwatv_update_weights(f, params, i) if params.kind == "rwatv" else None
            f = reg.descent_step(f, params, cfg.beta, cfg.n_g, cfg.tv_step_scale, weights)
            f = enforce_positivity(f)

        n_groups = None
        if cfg.fires_at(i):
            n_groups = cfg.groups_at(i)
            f, seg = apply_global_constraint(f, n_groups, beta_global, cfg.connectivity, cfg.refine)
            if seg is None:
                log.warning("iteration %d: global step skipped on a constant image", i)

        if not np.all(np.isfinite(f)):
            raise DivergenceError(f"non-finite pixels after iteration {i}")
        pending = dict(
            iteration=i,
            update_magnitude=float(np.linalg.norm(f - prev)),
            snr_db=None if truth is None else snr_db(truth, f),
            n_groups=n_groups,
        )
        if callback is not None:
            callback(i, f)
        r = data.residual(f)
    _close(pending, r)
    return f, records
