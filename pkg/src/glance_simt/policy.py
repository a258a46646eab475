"""Read-count policies for simultaneous decoding.

A policy is stored as a dense vector ``g`` where ``g[i-1]`` is the number of
source tokens visible when emitting target token ``i`` (1-indexed steps).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class PolicyVector:
    g: tuple[int, ...]
    J: int

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(int(v) for v in self.g))

    def __len__(self) -> int:
        return len(self.g)

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.g)

    def to_line(self) -> str:
        """Trace-file form: ``J=<int>`` followed by the counts."""
        return " ".join([f"J={self.J}", *map(str, self.g)])

    @classmethod
    def from_line(cls, line: str) -> "PolicyVector":
        head, *rest = line.split()
        if not head.startswith("J="):
            raise ValueError(f"policy line must start with 'J=': {line!r}")
        return cls(tuple(int(v) for v in rest), int(head[2:]))


@dataclass(frozen=True)
class HmtLattice:
    events: np.ndarray  # (I, N) int
    L: int
    N: int
    J: int

    def column(self, n: int = 1) -> PolicyVector:
        """Policy obtained by always taking event ``n`` (1-indexed)."""
        if not 1 <= n <= self.N:
            raise ValueError(f"event index {n} outside 1..{self.N}")
        return PolicyVector(tuple(self.events[:, n - 1].tolist()), self.J)


def _check_positive(**kw):
    for name, value in kw.items():
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")


def wait_k_policy(k: int, I: int, J: int) -> PolicyVector:  # noqa: E741
    """g_i = min(k + i - 1, J) for i = 1..I."""
    _check_positive(k=k, I=I, J=J)
    i = np.arange(1, I + 1)
    return PolicyVector(tuple(np.minimum(k + i - 1, J).tolist()), J)


def hmt_lattice(L: int, N: int, I: int, J: int) -> HmtLattice:  # noqa: E741
    """Candidate read counts min(L + (i-1) + (n-1), J) for every step i and event n."""
    _check_positive(L=L, N=N, I=I, J=J)
    i = np.arange(I)[:, None]
    n = np.arange(N)[None, :]
    events = np.minimum(L + i + n, J).astype(np.int64)
    return HmtLattice(events, L, N, J)


def validate_policy(p: PolicyVector) -> Optional[str]:
    """Return ``None`` if ``p`` is well formed, else a message naming the first bad step."""
    if len(p.g) == 0:
        return "empty policy"
    prev = None
    for i, gi in enumerate(p.g, start=1):
        if gi < 1:
            return f"violation at i={i}: g={gi} < 1"
        if gi > p.J:
            return f"violation at i={i}: g={gi} exceeds J={p.J}"
        if prev is not None and gi < prev:
            return f"violation at i={i}: g={gi} < g[{i - 1}]={prev} (not nondecreasing)"
        prev = gi
    return None


# A policy generator maps (I, J) -> PolicyVector. Decoding asks for step counts on
# demand, so generators must accept any I.
PolicyFn = Callable[[int, int], PolicyVector]


def wait_k(k: int) -> PolicyFn:
    return lambda I, J: wait_k_policy(k, I, J)  # noqa: E741


def hmt(L: int, N: int, selector: Optional[Callable[[HmtLattice], PolicyVector]] = None) -> PolicyFn:
    """HMT-lattice policy. Without a selector, event n=1 is used at every step."""
    select = selector or (lambda lat: lat.column(1))
    return lambda I, J: select(hmt_lattice(L, N, I, J))  # noqa: E741


def policy_from_spec(spec: dict) -> PolicyFn:
    """Build a generator from a config dict: ``{"kind": "wait_k", "k": 3}`` or
    ``{"kind": "hmt", "L": 2, "N": 3}``."""
    kind = spec.get("kind", "wait_k")
    if kind == "wait_k":
        return wait_k(int(spec["k"]))
    if kind == "hmt":
        return hmt(int(spec["L"]), int(spec["N"]))
    raise ValueError(f"unknown policy kind {kind!r}")
