"""Glancing-future curriculum training for simultaneous translation, at desk scale."""

from .curriculum import AdjustedPolicy, CurriculumSchedule, adjust_policy, alpha_at, future_count
from .policy import HmtLattice, PolicyVector, hmt_lattice, validate_policy, wait_k_policy

__version__ = "0.1.0"

__all__ = [
    "AdjustedPolicy",
    "CurriculumSchedule",
    "HmtLattice",
    "PolicyVector",
    "adjust_policy",
    "alpha_at",
    "future_count",
    "hmt_lattice",
    "validate_policy",
    "wait_k_policy",
]
