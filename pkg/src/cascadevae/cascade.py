"""Per-dimension KL weight schedule.

Every continuous latent dimension starts heavily penalized at beta_h and is
relieved to beta_l one dimension at a time, once every r iterations, in index
order. The schedule is a pure function of the iteration counter so resuming
from a checkpoint reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CascadeSchedule:
    beta_h: float
    beta_l: float
    r: int
    m: int

    def __post_init__(self):
        if not (self.beta_h >= self.beta_l >= 0.0):
            raise ConfigError(f"need beta_h >= beta_l >= 0, got {self.beta_h}, {self.beta_l}")
        if self.r < 1:
            raise ConfigError(f"relief period must be >= 1, got {self.r}")
        if self.m < 1:
            raise ConfigError(f"dimension count must be >= 1, got {self.m}")


def relieved_count(sched: CascadeSchedule, t: int) -> int:
    if t < 0:
        raise ValueError(f"iteration must be >= 0, got {t}")
    return min(sched.m, t // sched.r)


def betas_at(sched: CascadeSchedule, t: int) -> np.ndarray:
    """Beta vector at iteration t: a relieved prefix at beta_l, the rest at beta_h."""
    k = relieved_count(sched, t)
    out = np.full(sched.m, sched.beta_h, dtype=np.float64)
    out[:k] = sched.beta_l
    return out
