"""Glance curriculum against its baselines over paired seeds, evaluated at wait-k.

Each seed drives both the synthetic corpus and the training run. Writes one CSV
row per (variant, seed, k_test) and prints a per-variant summary.

    python3 scripts/compare_curricula.py --seeds 0 1 2 --out runs/curricula
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
from pathlib import Path

from glance_simt import cli
from glance_simt import config as C

VARIANTS = {
    "glance": {"curriculum.mode": "glance"},
    "prefix2prefix": {"curriculum.mode": "prefix2prefix"},
    "seq2seq": {"curriculum.mode": "seq2seq"},
    "constant_alpha": {"curriculum.mode": "glance", "curriculum.constant_alpha": True},
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/shifted_copy.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--k-test", type=int, nargs="+", default=[1])
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/curricula")
    args = ap.parse_args()

    base = json.loads(Path(args.config).read_text())
    out = Path(args.out)
    rows = []
    for seed in args.seeds:
        for name in args.variants:
            data = copy.deepcopy(base)
            data["seed"] = seed
            data["task"]["seed"] = seed
            if args.steps:
                data["train"]["steps"] = args.steps
            for k, v in VARIANTS[name].items():
                C.set_dotted(data, k, v)
            cfg = C.from_dict(data)
            cfg.out_dir = str(out / f"{name}_s{seed}")
            cfg.data_dir = str(out / f"data_{C.task_fingerprint(cfg)}")
            if not (Path(cfg.data_dir) / "test.src").exists():
                cli.cmd_generate(cfg)
            cli.cmd_train(cfg)
            for k, r in cli.cmd_evaluate(cfg, k_test=args.k_test):
                rows.append([name, seed, k, f"{r.accuracy:.4f}", f"{r.bleu:.2f}", f"{r.al:.2f}", f"{r.hr:.4f}"])
                print(" ".join(map(str, rows[-1])), flush=True)

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "k_test", "accuracy", "bleu", "al", "hr"])
        w.writerows(rows)
    print(f"\n{'variant':<16}{'k':>3}{'acc':>9}{'BLEU':>8}{'AL':>7}{'HR':>8}")
    for name in args.variants:
        for k in args.k_test:
            sel = [r for r in rows if r[0] == name and r[2] == k]
            mean = [sum(float(r[i]) for r in sel) / len(sel) for i in range(3, 7)]
            print(f"{name:<16}{k:>3}{mean[0]:>9.4f}{mean[1]:>8.2f}{mean[2]:>7.2f}{mean[3]:>8.4f}")


if __name__ == "__main__":
    main()
