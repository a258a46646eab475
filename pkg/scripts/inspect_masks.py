"""Print the training cross-attention masks for one sentence pair along the curriculum.

    python3 scripts/inspect_masks.py --k 2 --src-len 8 --tgt-len 6 --strategy randomization
"""

from __future__ import annotations

import argparse

from glance_simt.curriculum import CurriculumSchedule, adjust_policy, alpha_at
from glance_simt.masking import build_masks
from glance_simt.policy import wait_k_policy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--src-len", type=int, default=8)
    ap.add_argument("--tgt-len", type=int, default=6)
    ap.add_argument("--alpha-min", type=float, default=0.05)
    ap.add_argument("--decay", type=int, default=1000)
    ap.add_argument("--strategy", default="adjacency", choices=["adjacency", "randomization"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    s = CurriculumSchedule(alpha_min=args.alpha_min, d=args.decay, strategy=args.strategy, rng_seed=args.seed)
    policy = wait_k_policy(args.k, args.tgt_len, args.src_len)
    for n in (0, args.decay // 4, args.decay // 2, 3 * args.decay // 4, args.decay):
        adjusted = adjust_policy(policy, s, n)
        print(f"update {n}  alpha={alpha_at(s, n):.3f}  g_hat={list(adjusted.g_hat)}")
        print(build_masks(adjusted, args.src_len, args.tgt_len).to_text())


if __name__ == "__main__":
    main()
