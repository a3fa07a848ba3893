"""Reconstruction parameters shared by the solver and the segmentation step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .regularizers import RegularizerParams

__all__ = ["ReconConfig", "ConfigError", "STEP_RULES"]

STEP_RULES = ("sirt", "landweber")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReconConfig:
    """Solver and constraint settings.

    Defaults are the published experiment settings: ``alpha=0.2, beta=0.5,
    n_g=20, n_c=50, n_stop=800, n_iter=1000``.

    ``step_rule`` picks how ``alpha`` scales the data update:
    ``"sirt"`` uses ``f += alpha * C H^T R (g - H f)`` with ``R`` and ``C`` the
    inverse ray and pixel weight sums (stable for ``0 < alpha < 2``);
    ``"landweber"`` uses the raw ``f += alpha * H^T (g - H f)``.

    ``global_beta`` and ``fixed_groups`` default to ``beta`` and the growing
    schedule ``i // n_c + 2``. ``refine=False`` skips boundary release and
    snaps every pixel to its group median (plain re-quantisation).
    """

    alpha: float = 0.2
    beta: float = 0.5
    n_g: int = 20
    n_c: int = 50
    n_stop: int = 800
    n_iter: int = 1000
    regularizer: RegularizerParams = field(default_factory=RegularizerParams)
    global_enabled: bool = True
    rng_seed: int = 0
    global_beta: float | None = None
    step_rule: str = "sirt"
    fixed_groups: int | None = None
    connectivity: int = 4
    refine: bool = True
    tv_step_scale: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.global_beta is not None and not 0.0 <= self.global_beta <= 1.0:
            raise ConfigError(f"global_beta must lie in [0, 1], got {self.global_beta}")
        for name in ("n_g", "n_c", "n_stop", "n_iter"):
            v = getattr(self, name)
            if int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v}")
        if self.n_g < 0:
            raise ConfigError("n_g must be >= 0")
        if self.n_c < 1:
            raise ConfigError("n_c must be >= 1")
        if not 0 <= self.n_stop <= self.n_iter:
            raise ConfigError(f"need 0 <= n_stop <= n_iter, got n_stop={self.n_stop}, n_iter={self.n_iter}")
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"step_rule must be one of {STEP_RULES}")
        if self.fixed_groups is not None and self.fixed_groups < 2:
            raise ConfigError("fixed_groups must be >= 2")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.tv_step_scale is not None and not self.tv_step_scale > 0:
            raise ConfigError("tv_step_scale must be positive")

    @property
    def effective_global_beta(self) -> float:
        return self.beta if self.global_beta is None else self.global_beta

    def groups_at(self, i: int) -> int:
        """Group count used by the global step at 1-based iteration ``i``."""
        if self.fixed_groups is not None:
            return self.fixed_groups
        return i // self.n_c + 2

    def fires_at(self, i: int) -> bool:
        return self.global_enabled and i % self.n_c == 0 and i < self.n_stop

    def with_(self, **changes) -> "ReconConfig":
        return replace(self, **changes)
