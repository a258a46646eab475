import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from glance_simt import model as M  # noqa: E402
from glance_simt.curriculum import CurriculumSchedule, adjust_policy  # noqa: E402
from glance_simt.data import ParallelPair, collate  # noqa: E402
from glance_simt.masking import batch_masks, build_masks  # noqa: E402
from glance_simt.policy import wait_k_policy  # noqa: E402


def tiny_config(**kw):
    base = dict(
        src_vocab=11,
        tgt_vocab=11,
        d_model=8,
        n_heads=2,
        n_enc_layers=1,
        n_dec_layers=1,
        d_ff=12,
        dropout=0.0,
        label_smoothing=0.0,
        dtype="float64",
    )
    base.update(kw)
    return M.ModelConfig(**base)


def jittered_params(cfg, seed=0, scale=0.1):
    """Init plus noise so biases and LN gains are not at their trivial values."""
    p = M.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    for k in p:
        p[k] = p[k] + rng.normal(0.0, scale, p[k].shape).astype(p[k].dtype)
    return p


def random_pairs(rng, n, vocab=11, max_len=6, min_len=1):
    pairs = []
    for _ in range(n):
        J = int(rng.integers(min_len, max_len + 1))
        I = int(rng.integers(min_len, max_len + 1))  # noqa: E741
        pairs.append(
            ParallelPair(tuple(rng.integers(4, vocab, size=J).tolist()), tuple(rng.integers(4, vocab, size=I).tolist()))
        )
    return pairs


def masked_batch(pairs, k=1, alpha=0.0, strategy="adjacency", seed=0):
    """Collated batch plus masks for wait-k with a fixed glance ratio."""
    b = collate(pairs)
    s = CurriculumSchedule(alpha_min=0.0, d=1, strategy=strategy, rng_seed=seed)
    J_pad, I_pad = b.src.shape[1], b.tgt_in.shape[1]
    sets, adjusted = [], []
    for p in pairs:
        J, I = len(p.src), len(p.tgt) + 1  # noqa: E741
        a = adjust_policy(wait_k_policy(k, I, J), s, 0, alpha=alpha)
        adjusted.append(a)
        sets.append(build_masks(a, J, I, (J_pad, I_pad)))
    return b, batch_masks(sets), adjusted


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
