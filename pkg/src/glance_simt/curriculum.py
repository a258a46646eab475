"""Glancing-future curriculum.

During training, target step ``i`` may look at ``f_i`` source tokens beyond its
policy prefix ``g_i``. The exposed fraction ``alpha`` of the remaining source
decays linearly from 1 to ``alpha_min`` over ``d`` optimizer updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .policy import PolicyVector

STRATEGIES = ("adjacency", "attention", "randomization")


@dataclass
class CurriculumSchedule:
    alpha_min: float = 0.05
    d: int = 160000
    strategy: str = "adjacency"
    rng_seed: int = 0
    # Table-2 style ablation: alpha stays at alpha_min for the whole run.
    constant: bool = False
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha_min <= 1.0:
            raise ValueError(f"alpha_min must lie in [0, 1], got {self.alpha_min}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"decay horizon d must be a positive integer, got {self.d}")
        self.strategy = self.strategy.lower()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown glance strategy {self.strategy!r}; expected one of {STRATEGIES}")
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def rng(self) -> np.random.Generator:
        return self._rng


@dataclass(frozen=True)
class AdjustedPolicy:
    g_hat: tuple[int, ...]
    base: PolicyVector
    # 1-indexed source positions readable beyond the base prefix, per step
    extra_positions: tuple[tuple[int, ...], ...]

    @property
    def J(self) -> int:
        return self.base.J

    @property
    def future(self) -> tuple[int, ...]:
        return tuple(len(e) for e in self.extra_positions)

    def readable(self, i: int) -> tuple[int, ...]:
        """Sorted 1-indexed source positions visible at step ``i`` (1-indexed)."""
        g = self.base.g[i - 1]
        return tuple(range(1, g + 1)) + tuple(sorted(self.extra_positions[i - 1]))


def alpha_at(s: CurriculumSchedule, n_update: int) -> float:
    if s.constant:
        return float(s.alpha_min)
    return s.alpha_min + (1.0 - s.alpha_min) * max(1.0 - n_update / s.d, 0.0)


def future_count(J: int, g_i: int, alpha: float) -> int:
    """Number of extra source tokens, floor((J - g_i) * alpha)."""
    if not 1 <= g_i <= J:
        raise ValueError(f"g_i={g_i} outside 1..J={J}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    return int(math.floor((J - g_i) * alpha))


def adjust_policy(
    p: PolicyVector,
    s: CurriculumSchedule,
    n_update: int,
    attention: Optional[np.ndarray] = None,
    alpha: Optional[float] = None,
) -> AdjustedPolicy:
    """Extend each step's readable set by ``f_i`` future positions.

    ``attention`` is an (I, J) array of cross-attention weights and is required
    by the attention strategy. ``alpha`` overrides the schedule value.
    """
    a = alpha_at(s, n_update) if alpha is None else alpha
    J = p.J
    if s.strategy == "attention":
        if attention is None:
            raise ValueError("attention strategy needs cross-attention weights")
        attention = np.asarray(attention)
        if attention.shape[0] < len(p.g) or attention.shape[1] < J:
            raise ValueError(f"attention weights of shape {attention.shape} do not cover I={len(p.g)}, J={J}")

    g_hat, extras = [], []
    for i, g in enumerate(p.g):
        f = future_count(J, g, a)
        if s.strategy == "adjacency":
            chosen = tuple(range(g + 1, g + f + 1))
        elif s.strategy == "randomization":
            chosen = tuple(sorted((s.rng.choice(J - g, size=f, replace=False) + g + 1).tolist())) if f else ()
        else:
            w = attention[i, g:J]
            order = np.argsort(-w, kind="stable")[:f]
            chosen = tuple(sorted((order + g + 1).tolist()))
        g_hat.append(g + f)
        extras.append(chosen)
    return AdjustedPolicy(tuple(g_hat), p, tuple(extras))


def alpha_trace(s: CurriculumSchedule, steps: Sequence[int]) -> list[float]:
    return [alpha_at(s, n) for n in steps]
