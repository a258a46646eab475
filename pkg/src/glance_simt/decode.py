"""Streaming greedy decoding under a READ/WRITE policy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model as M
from .data import BOS, EOS
from .masking import causal_mask
from .policy import PolicyFn


@dataclass
class TranslationTrace:
    actions: list = field(default_factory=list)  # "R" or ("W", token)
    reads_at_write: list[int] = field(default_factory=list)  # one per WRITE, eos included
    tokens: list[int] = field(default_factory=list)  # emitted tokens without eos
    src_len: int = 0
    truncated: bool = False

    @property
    def reads(self) -> int:
        return sum(1 for a in self.actions if a == "R")

    @property
    def token_reads(self) -> list[int]:
        """Read counts for the emitted tokens, eos excluded."""
        return self.reads_at_write[: len(self.tokens)]

    def action_string(self) -> str:
        return "".join("R" if a == "R" else "W" for a in self.actions)

    def to_line(self) -> str:
        return " ".join([self.action_string(), *map(str, self.reads_at_write)])

    @classmethod
    def from_line(cls, line: str, tokens: Sequence[int] = ()) -> "TranslationTrace":
        """Rebuild a trace from its text form; WRITE token ids are taken from ``tokens``."""
        acts, *reads = line.split()
        tr = cls(reads_at_write=[int(r) for r in reads], tokens=list(tokens))
        toks = iter(list(tokens) + [EOS])
        for c in acts:
            tr.actions.append("R" if c == "R" else ("W", next(toks, EOS)))
        tr.src_len = tr.reads
        return tr


def _prefix_masks(J: int, I: int):  # noqa: E741
    return (
        causal_mask(J)[None],
        causal_mask(I)[None],
        np.ones((1, I, J), dtype=bool),
    )


def stream_decode(
    params: M.Params,
    cfg: M.ModelConfig,
    src: Sequence[int],
    policy: PolicyFn,
    max_len: Optional[int] = None,
) -> TranslationTrace:
    """Greedy simultaneous decoding.

    Before WRITE i exactly ``min(g_i, J)`` source tokens have been read. The
    encoder only ever sees the read prefix, and the decoder attends to all of it.
    """
    J = len(src)
    if J == 0:
        raise ValueError("cannot decode an empty source")
    max_len = max_len or 2 * J + 10
    src_arr = np.asarray(src, dtype=np.int64)[None, :]
    tr = TranslationTrace(src_len=J)
    enc = None
    enc_reads = 0
    reads = 0
    for i in range(1, max_len + 1):
        need = min(max(policy(i, J).g[i - 1], reads), J)
        while reads < need:
            reads += 1
            tr.actions.append("R")
        if enc is None or enc_reads != reads:
            enc_mask, _, _ = _prefix_masks(reads, 1)
            enc = M.encode(params, cfg, src_arr[:, :reads], enc_mask)
            enc_reads = reads
        tgt_in = np.asarray([[BOS, *tr.tokens]], dtype=np.int64)
        _, dec_mask, cross = _prefix_masks(reads, tgt_in.shape[1])
        h = M.decode_states(params, cfg, tgt_in, enc, dec_mask, cross)
        logits = h[0, -1] @ params["out.w"] + params["out.b"]
        tok = int(np.argmax(logits))
        tr.actions.append(("W", tok))
        tr.reads_at_write.append(reads)
        if tok == EOS:
            return tr
        tr.tokens.append(tok)
    tr.truncated = True
    return tr


def batch_decode(
    params: M.Params,
    cfg: M.ModelConfig,
    sources: Sequence[Sequence[int]],
    policy: PolicyFn,
    max_len_ratio: float = 2.0,
    max_len_extra: int = 10,
) -> list[TranslationTrace]:
    """Decode each source independently, in input order."""
    traces = []
    for n, src in enumerate(sources):
        try:
            traces.append(stream_decode(params, cfg, src, policy, int(max_len_ratio * len(src)) + max_len_extra))
        except Exception as exc:
            raise RuntimeError(f"decoding failed for sentence {n}: {exc}") from exc
    return traces
