"""Boolean attention masks for single-pass training under a read policy.

``True`` means attention is permitted. Masks are applied as an additive -inf
before the softmax, so masked positions get exactly zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .curriculum import AdjustedPolicy


@dataclass(frozen=True)
class MaskSet:
    cross_mask: np.ndarray  # (I_pad, J_pad)
    enc_self_mask: np.ndarray  # (J_pad, J_pad)
    dec_self_mask: np.ndarray  # (I_pad, I_pad)
    src_pad: np.ndarray  # (J_pad,) True at padding
    tgt_pad: np.ndarray  # (I_pad,) True at padding

    @property
    def shape(self) -> tuple[int, int]:
        return self.cross_mask.shape

    def to_text(self) -> str:
        return cross_mask_to_text(self.cross_mask)


@dataclass(frozen=True)
class MaskBatch:
    cross_mask: np.ndarray  # (B, I_pad, J_pad)
    enc_self_mask: np.ndarray  # (B, J_pad, J_pad)
    dec_self_mask: np.ndarray  # (B, I_pad, I_pad)
    src_pad: np.ndarray  # (B, J_pad)
    tgt_pad: np.ndarray  # (B, I_pad)

    def __len__(self) -> int:
        return self.cross_mask.shape[0]


@lru_cache(maxsize=512)
def _tril(n: int) -> np.ndarray:
    m = np.tril(np.ones((n, n), dtype=bool))
    m.flags.writeable = False
    return m


def causal_mask(n: int, pad: Optional[np.ndarray] = None) -> np.ndarray:
    """Lower-triangular (n, n) mask; rows and columns at padding are cleared."""
    if pad is None:
        return _tril(n).copy()
    keep = ~np.asarray(pad, dtype=bool)
    return _tril(n) & keep[:, None] & keep[None, :]


def _pad_vector(length: int, pad_to: int) -> np.ndarray:
    v = np.ones(pad_to, dtype=bool)
    v[:length] = False
    return v


def readable_rows(adjusted: AdjustedPolicy, J: int) -> np.ndarray:
    """(I, J) boolean matrix of readable positions, unpadded."""
    g = np.asarray(adjusted.base.g)
    m = np.arange(J)[None, :] < g[:, None]
    sizes = [len(e) for e in adjusted.extra_positions]
    if any(sizes):
        rows = np.repeat(np.arange(len(g)), sizes)
        cols = np.fromiter((j for e in adjusted.extra_positions for j in e), dtype=np.int64, count=sum(sizes))
        m[rows, cols - 1] = True
    return m


def build_masks(
    adjusted: AdjustedPolicy,
    src_len: int,
    tgt_len: int,
    pad_to: Optional[Sequence[int]] = None,
) -> MaskSet:
    """Masks for one sentence pair. ``pad_to`` is ``(J_pad, I_pad)``."""
    if adjusted.J != src_len:
        raise ValueError(f"policy built for J={adjusted.J} but src_len={src_len}")
    if len(adjusted.g_hat) != tgt_len:
        raise ValueError(f"policy has {len(adjusted.g_hat)} steps but tgt_len={tgt_len}")
    J_pad, I_pad = pad_to if pad_to is not None else (src_len, tgt_len)
    if J_pad < src_len or I_pad < tgt_len:
        raise ValueError(f"pad_to={tuple(pad_to)} smaller than lengths ({src_len}, {tgt_len})")

    cross = np.zeros((I_pad, J_pad), dtype=bool)
    cross[:tgt_len, :src_len] = readable_rows(adjusted, src_len)
    src_pad = _pad_vector(src_len, J_pad)
    tgt_pad = _pad_vector(tgt_len, I_pad)
    return MaskSet(
        cross_mask=cross,
        enc_self_mask=causal_mask(J_pad, src_pad),
        dec_self_mask=causal_mask(I_pad, tgt_pad),
        src_pad=src_pad,
        tgt_pad=tgt_pad,
    )


def batch_masks(masks: Sequence[MaskSet], pad_to: Optional[Sequence[int]] = None) -> MaskBatch:
    """Stack per-sentence masks padded to a common ``(J_pad, I_pad)`` shape."""
    if not masks:
        raise ValueError("cannot batch an empty list of masks")
    shape = masks[0].shape
    expected = (pad_to[1], pad_to[0]) if pad_to is not None else shape
    for n, m in enumerate(masks):
        if m.shape != expected:
            raise ValueError(f"mask {n} has shape {m.shape}, expected {expected}")
    return MaskBatch(
        cross_mask=np.stack([m.cross_mask for m in masks]),
        enc_self_mask=np.stack([m.enc_self_mask for m in masks]),
        dec_self_mask=np.stack([m.dec_self_mask for m in masks]),
        src_pad=np.stack([m.src_pad for m in masks]),
        tgt_pad=np.stack([m.tgt_pad for m in masks]),
    )


def cross_mask_to_text(cross: np.ndarray) -> str:
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.asarray(cross)) + "\n"


def cross_mask_from_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.strip().splitlines()]
    return np.array([[c == "1" for c in row] for row in rows], dtype=bool)
