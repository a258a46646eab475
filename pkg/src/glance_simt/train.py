"""Training: Adam, the curriculum-aware train step, and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import model as M
from .curriculum import CurriculumSchedule, adjust_policy, alpha_at
from .data import Batch, make_batches
from .masking import MaskBatch, batch_masks, build_masks
from .policy import PolicyFn

log = logging.getLogger(__name__)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup: int = 0
    clip_norm: Optional[float] = 1.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.warmup and self.t < self.warmup:
            return self.lr * (self.t + 1) / self.warmup
        return self.lr

    def step(self, params: M.Params, grads: M.Params) -> float:
        """Update ``params`` in place; returns the pre-clipping gradient norm."""
        norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        lr = self.current_lr()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name] * scale
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return norm


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"training diverged at update {step}: {message}")
        self.step = step


def top_cross_attention(params: M.Params, cfg: M.ModelConfig, batch: Batch) -> np.ndarray:
    """Head-averaged top-layer cross-attention (B, I, J) from a full-source pass."""
    weights: list = []
    M.forward(params, cfg, batch.src, batch.tgt_in, full_masks(batch), attn_out=weights)
    return weights[0].mean(axis=1)


def batch_training_masks(
    batch: Batch,
    policy: PolicyFn,
    schedule: CurriculumSchedule,
    n_update: int,
    attention: Optional[np.ndarray] = None,
) -> MaskBatch:
    J_pad, I_pad = batch.src.shape[1], batch.tgt_in.shape[1]
    alpha = alpha_at(schedule, n_update)
    sets = []
    for b in range(len(batch)):
        J, I = int(batch.src_len[b]), int(batch.tgt_len[b])  # noqa: E741
        w = attention[b, :I, :J] if attention is not None else None
        adjusted = adjust_policy(policy(I, J), schedule, n_update, attention=w, alpha=alpha)
        sets.append(build_masks(adjusted, J, I, (J_pad, I_pad)))
    return batch_masks(sets)


@dataclass
class StepResult:
    loss: M.LossReport
    alpha: float
    grad_norm: float


class Trainer:
    """Holds parameters, optimizer state and the update counter."""

    def __init__(
        self,
        params: M.Params,
        cfg: M.ModelConfig,
        optimizer: Adam,
        schedule: CurriculumSchedule,
        policy: PolicyFn,
        seed: int = 0,
    ):
        self.params = params
        self.cfg = cfg
        self.opt = optimizer
        self.schedule = schedule
        self.policy = policy
        self.n_update = 0
        self.dropout_rng = np.random.default_rng([seed, 1])

    def masks_for(self, batch: Batch) -> MaskBatch:
        attention = None
        if self.schedule.strategy == "attention":
            attention = top_cross_attention(self.params, self.cfg, batch)
        return batch_training_masks(batch, self.policy, self.schedule, self.n_update, attention)

    def train_step(self, batch: Batch) -> StepResult:
        """One optimizer update with masks built from the current alpha."""
        alpha = alpha_at(self.schedule, self.n_update)
        masks = self.masks_for(batch)
        try:
            report, grads = M.loss_and_grads(
                self.params, self.cfg, batch.src, batch.tgt_in, batch.tgt_out, masks, rng=self.dropout_rng
            )
        except FloatingPointError as exc:
            raise TrainingDiverged(self.n_update, str(exc)) from exc
        if not np.isfinite(report.total):
            raise TrainingDiverged(self.n_update, "loss is not finite")
        norm = self.opt.step(self.params, grads)
        self.n_update += 1
        return StepResult(report, alpha, norm)


def full_masks(batch: Batch) -> MaskBatch:
    """Seq2seq masks: causal self-attention, every real source position readable."""
    src_pad = np.arange(batch.src.shape[1])[None, :] >= batch.src_len[:, None]
    tgt_pad = np.arange(batch.tgt_in.shape[1])[None, :] >= batch.tgt_len[:, None]
    I_pad, J_pad = tgt_pad.shape[1], src_pad.shape[1]
    enc = np.tril(np.ones((J_pad, J_pad), dtype=bool))[None] & ~src_pad[:, :, None] & ~src_pad[:, None, :]
    dec = np.tril(np.ones((I_pad, I_pad), dtype=bool))[None] & ~tgt_pad[:, :, None] & ~tgt_pad[:, None, :]
    cross = ~tgt_pad[:, :, None] & ~src_pad[:, None, :]
    return MaskBatch(cross, enc, dec, src_pad, tgt_pad)


def epoch_batches(pairs: Sequence, max_tokens: int, seed: int) -> Iterator[Batch]:
    """Endless stream of batches, reshuffled every epoch."""
    epoch = 0
    while True:
        yield from make_batches(pairs, max_tokens, seed=seed * 1_000_003 + epoch)
        epoch += 1


def train(
    trainer: Trainer,
    pairs: Sequence,
    steps: int,
    max_tokens: int,
    seed: int,
    log_every: int = 100,
    on_log: Optional[Callable[[int, float, float], None]] = None,
) -> list[tuple[int, float, float]]:
    """Run ``steps`` updates. Logged rows are (update index, per-token loss, alpha)."""
    rows = []
    batches = epoch_batches(pairs, max_tokens, seed)
    for _ in range(steps):
        step = trainer.n_update
        res = trainer.train_step(next(batches))
        if step % log_every == 0 or step == steps - 1:
            rows.append((step, res.loss.per_token, res.alpha))
            if on_log is not None:
                on_log(step, res.loss.per_token, res.alpha)
            log.info("update %d loss %.4f alpha %.4f", step, res.loss.per_token, res.alpha)
    return rows
