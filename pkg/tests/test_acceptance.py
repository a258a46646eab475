"""Acceptance checks, one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Training runs are cached under ``runs/acceptance`` (override with
``$GLANCE_SIMT_ACCEPT_DIR``) keyed by config fingerprint, so criteria that share
a configuration share the run. The determinism check always retrains.
"""

from __future__ import annotations

import copy
import csv
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracle  # noqa: E402
from conftest import jittered_params, masked_batch, random_pairs, tiny_config  # noqa: E402

from glance_simt import cli  # noqa: E402
from glance_simt import config as C  # noqa: E402
from glance_simt import model as M  # noqa: E402
from glance_simt.curriculum import CurriculumSchedule, alpha_at, future_count  # noqa: E402
from glance_simt.data import PAD  # noqa: E402
from glance_simt.masking import causal_mask  # noqa: E402
from glance_simt.metrics import average_lagging, corpus_bleu, hallucination_rate  # noqa: E402
from glance_simt.policy import hmt_lattice, wait_k_policy  # noqa: E402

REPORT: list[str] = []
ROOT = Path(os.environ.get("GLANCE_SIMT_ACCEPT_DIR", Path(__file__).resolve().parents[1] / "runs" / "acceptance"))
SEEDS = (0, 1, 2)

# Desk-scale stand-in for the directional claims: shifted copy (delta 2) over a
# Markov source so that upcoming source tokens are partly predictable.
BASE = {
    "seed": 0,
    "name": "accept",
    "task": {
        "kind": "shifted_copy",
        "delta": 2,
        "vocab_size": 50,
        "min_len": 6,
        "max_len": 14,
        "size": 20000,
        "seed": 0,
        "source": "markov",
        "branching": 3,
    },
    "n_test": 500,
    "model": {"d_model": 32, "n_heads": 4, "n_enc_layers": 1, "n_dec_layers": 1, "d_ff": 64},
    "policy": {"kind": "wait_k", "k": 1},
    "curriculum": {"mode": "glance", "alpha_min": 0.05, "decay_updates": 1500, "glance_strategy": "adjacency"},
    "train": {"steps": 3000, "batch_tokens": 400, "lr": 1e-3, "warmup": 100, "log_every": 100, "save_every": 1000},
    "eval": {"k_test": [1]},
}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)


def experiment(seed: int, **changes) -> dict:
    data = copy.deepcopy(BASE)
    data["seed"] = seed
    data["task"]["seed"] = seed
    for k, v in changes.items():
        C.set_dotted(data, k, v)
    return data


def run(data: dict, out: Path | None = None) -> dict:
    """Generate, train and evaluate at wait-1; returns the eval row as a dict."""
    cfg = C.from_dict(data)
    cfg.out_dir = str(out or ROOT / f"run_{C.fingerprint(cfg)}")
    cfg.data_dir = str(ROOT / f"data_{C.task_fingerprint(cfg)}")
    eval_csv = Path(cfg.out_dir) / "eval.csv"
    if out is None and eval_csv.exists():
        return _read_eval(eval_csv)
    if not (Path(cfg.data_dir) / "test.src").exists():
        cli.cmd_generate(cfg)
    cli.cmd_train(cfg)
    cli.cmd_evaluate(cfg, k_test=[1])
    return _read_eval(eval_csv)


def _read_eval(path: Path) -> dict:
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return {k: (v if k == "config_hash" else float(v)) for k, v in row.items()}


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_formula_exactness():
    t0 = time.perf_counter()
    bad = 0
    alphas = np.linspace(0.0, 1.0, 50)
    for J in range(1, 13):
        for I in range(1, 13):  # noqa: E741
            for k in range(1, 9):
                bad += list(wait_k_policy(k, I, J).g) != oracle.wait_k(k, I, J)
            for L in range(1, 9):
                for N in range(1, 9):
                    bad += hmt_lattice(L, N, I, J).events.tolist() != oracle.hmt(L, N, I, J)
        for g in range(1, J + 1):
            for a in alphas:
                bad += future_count(J, g, float(a)) != oracle.future(J, g, float(a))
    worst = 0.0
    for amin in alphas:
        for d in (1, 7, 100, 160000):
            s = CurriculumSchedule(alpha_min=float(amin), d=d)
            for n in (0, 1, d // 3, d // 2, d - 1, d, d + 1, 10 * d):
                worst = max(worst, abs(alpha_at(s, n) - oracle.alpha(float(amin), d, n)))
    dt = time.perf_counter() - t0
    ok = bad == 0 and worst <= 1e-12 and dt < 5
    report(1, ok, f"integer mismatches={bad}, max |alpha err|={worst:.1e}, {dt:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------


def test_criterion_2_masking_invariant():
    t0 = time.perf_counter()
    leaks = prefix_bad = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cfg = tiny_config(n_enc_layers=int(rng.integers(1, 3)), n_dec_layers=int(rng.integers(1, 3)))
        p = jittered_params(cfg, seed)
        pairs = random_pairs(rng, 2, min_len=2)
        alpha = float(rng.choice([0.0, 0.25, 0.5]))
        b, masks, adjusted = masked_batch(pairs, k=int(rng.integers(1, 4)), alpha=alpha)
        base = M.forward(p, cfg, b.src, b.tgt_in, masks)
        for n, a in enumerate(adjusted):
            J = len(pairs[n].src)
            for i, gh in enumerate(a.g_hat, start=1):
                if gh == J:
                    continue
                # perturb the embeddings of every masked source position for step i
                q = {k: v.copy() for k, v in p.items()}
                src = b.src.copy()
                src[n, gh:J] = cfg.src_vocab  # fresh row, only used here
                q["src_embed"] = np.vstack([p["src_embed"], rng.normal(0, 1, (1, cfg.d_model))])
                out = M.forward(q, cfg, src, b.tgt_in, masks)
                leaks += not np.array_equal(out[n, :i], base[n, :i])
        src = b.src[:1, : len(pairs[0].src)]
        J = src.shape[1]
        full = M.encode(p, cfg, src, causal_mask(J)[None])
        for j in range(1, J + 1):
            padded = src.copy()
            padded[:, j:] = PAD
            pre = M.encode(p, cfg, padded, causal_mask(J, np.arange(J) >= j)[None])
            prefix_bad += not np.array_equal(pre[:, :j], full[:, :j])
    dt = time.perf_counter() - t0
    ok = leaks == 0 and prefix_bad == 0 and dt < 30
    report(2, ok, f"100 instances: leaking steps={leaks}, prefix mismatches={prefix_bad}, {dt:.1f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------------


def test_criterion_3_gradient_check():
    t0 = time.perf_counter()
    cfg = tiny_config(n_enc_layers=1, n_dec_layers=1, d_model=4, n_heads=2, d_ff=4, label_smoothing=0.1)
    p = jittered_params(cfg, 0, scale=0.3)
    b, masks, _ = masked_batch(random_pairs(np.random.default_rng(0), 2, max_len=4, min_len=2), k=1, alpha=0.4)
    _, grads = M.loss_and_grads(p, cfg, b.src, b.tgt_in, b.tgt_out, masks)

    def f():
        lp = M.forward(p, cfg, b.src, b.tgt_in, masks)
        return M.loss(lp, b.tgt_out, masks.tgt_pad, cfg.label_smoothing)[0].per_token

    num = oracle.fd_gradient(f, p, h=1e-5)
    worst, worst_group = 0.0, ""
    for group, names in M.param_groups(p).items():
        a = np.concatenate([grads[n].ravel() for n in names])
        d = np.concatenate([num[n].ravel() for n in names])
        scale = max(np.linalg.norm(a), np.linalg.norm(d))
        err = float(np.linalg.norm(a - d) / scale) if scale > 1e-8 else 0.0
        if err >= worst:
            worst, worst_group = err, group
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 120
    report(3, ok, f"{len(M.param_groups(p))} groups, worst relative error {worst:.1e} ({worst_group}), {dt:.1f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_metric_closed_forms():
    J = 10
    als = [average_lagging(list(wait_k_policy(k, J, J).g), J) for k in range(1, 6)]
    refs = [["a", "b", "c", "d", "e"], ["x", "y", "z"]]
    bleu = corpus_bleu(refs, refs)
    ids = [[4, 5, 6, 7], [8, 9]]
    hr = hallucination_rate([[4] * 4, [2] * 2], ids, [[2, 1, 4, 3], [1, 2]], ids)
    ok = als == [1.0, 2.0, 3.0, 4.0, 5.0] and bleu == 100.0 and hr == 0.0
    report(4, ok, f"AL(wait-1..5)={als}, BLEU(hyp=ref)={bleu}, HR(full sentence)={hr}")
    assert ok


# -- 5 ---------------------------------------------------------------------------


def test_criterion_5_curriculum_endpoints(tmp_path):
    small = {
        "seed": 0,
        "name": "c5",
        "task": {"kind": "shifted_copy", "delta": 1, "vocab_size": 8, "min_len": 3, "max_len": 5, "size": 50},
        "n_test": 2,
        "model": {"d_model": 8, "n_heads": 2, "n_enc_layers": 1, "n_dec_layers": 1, "d_ff": 8},
        "curriculum": {"alpha_min": 0.05, "decay_updates": 20},
        "train": {"steps": 40, "batch_tokens": 40, "log_every": 1, "warmup": 0},
    }
    alphas = {}
    for label, const in (("curriculum", False), ("constant", True)):
        data = copy.deepcopy(small)
        data["curriculum"]["constant_alpha"] = const
        cfg = C.from_dict(data)
        cfg.out_dir = str(tmp_path / label)
        cli.cmd_generate(cfg)
        cli.cmd_train(cfg)
        with open(tmp_path / label / "train_log.csv", newline="") as fh:
            alphas[label] = {int(r["step"]): float(r["alpha"]) for r in csv.DictReader(fh)}
    cur, const = alphas["curriculum"], alphas["constant"]
    ok = (
        cur[0] == 1.0
        and all(a == 0.05 for n, a in cur.items() if n >= 20)
        and all(cur[n] > cur[n + 1] for n in range(19))
        and set(const.values()) == {0.05}
    )
    report(5, ok, f"alpha[0]={cur[0]}, alpha[n>=d]={sorted({a for n, a in cur.items() if n >= 20})}, constant={sorted(set(const.values()))}")
    assert ok


# -- 6 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_glance_vs_prefix2prefix():
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        g = run(experiment(seed))
        p = run(experiment(seed, **{"curriculum.mode": "prefix2prefix"}))
        rows.append((seed, g, p))
    acc_wins = sum(g["accuracy"] >= p["accuracy"] for _, g, p in rows)
    hr_wins = sum(g["hr"] < p["hr"] for _, g, p in rows)
    dt = time.perf_counter() - t0
    detail = "; ".join(
        f"seed {s}: acc {g['accuracy']:.4f} vs {p['accuracy']:.4f}, HR {g['hr']:.4f} vs {p['hr']:.4f}" for s, g, p in rows
    )
    ok = acc_wins >= 2 and hr_wins == 3
    report(6, ok, f"glance vs prefix2prefix at wait-1 (acc wins {acc_wins}/3, HR wins {hr_wins}/3; {dt:.0f}s): {detail}")
    assert ok


# -- 7 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_train_latency_sweep():
    t0 = time.perf_counter()
    table = {}
    for seed in SEEDS:
        for k in (1, 3, 5):
            table[seed, k] = run(experiment(seed, **{"curriculum.mode": "prefix2prefix", "policy.k": k}))
    wins = sum(table[s, 3]["accuracy"] > table[s, 1]["accuracy"] for s in SEEDS)
    dt = time.perf_counter() - t0
    detail = "; ".join(
        f"seed {s}: acc k_train=1/3/5 " + "/".join(f"{table[s, k]['accuracy']:.4f}" for k in (1, 3, 5)) for s in SEEDS
    )
    ok = wins >= 2
    report(7, ok, f"k_train=3 beats k_train=1 at k_test=1 in {wins}/3 seeds ({dt:.0f}s): {detail}")
    assert ok


# -- 8 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_strategy_harness():
    t0 = time.perf_counter()
    rows = {s: run(experiment(0, **{"curriculum.glance_strategy": s})) for s in ("adjacency", "attention", "randomization")}
    keys = {tuple(sorted(r)) for r in rows.values()}
    ok = len(keys) == 1 and all(r["sentences"] == 500 for r in rows.values())
    dt = time.perf_counter() - t0
    detail = "; ".join(f"{s}: BLEU {r['bleu']:.2f}, AL {r['al']:.2f}, HR {r['hr']:.4f}" for s, r in rows.items())
    report(8, ok, f"all strategies trained and evaluated ({dt:.0f}s): {detail}")
    assert ok


# -- 9 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_determinism():
    data = experiment(0)
    run(data)
    cached = ROOT / f"run_{C.fingerprint(C.from_dict(data))}"
    fresh = ROOT / "rerun"
    shutil.rmtree(fresh, ignore_errors=True)
    run(data, out=fresh)
    names = ("checkpoint.bin", "hyp.k1.txt", "trace.k1.txt", "eval.csv", "train_log.csv")
    same = {n: (cached / n).read_bytes() == (fresh / n).read_bytes() for n in names}
    ok = all(same.values())
    report(9, ok, "byte-identical rerun: " + ", ".join(f"{n}={'yes' if v else 'NO'}" for n, v in same.items()))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
