#!/usr/bin/env python3
"""Accepted-block disagreement against codeword length on honest intermediate bits."""

import argparse

import numpy as np

from deeprandom.adversary import Rate
from deeprandom.core import ProtocolParams
from deeprandom.distill import block_error_rates
from deeprandom.rounds import simulate_rounds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--balanced", action="store_true", help="use n=256, k=4, K=1.5")
    ap.add_argument("--lengths", default="1,3,5,7,9")
    args = ap.parse_args()
    params = ProtocolParams(n=256, k=4.0, K=1.5) if args.balanced else ProtocolParams()
    rounds = simulate_rounds(params, args.rounds, args.seed)
    e_A = np.array([r.e_A for r in rounds], np.uint8)
    e_B = np.array([r.e_B for r in rounds], np.uint8)
    print(f"raw disagreement {np.mean(e_A != e_B):.4f} over {len(rounds)} rounds")
    rng = np.random.default_rng(args.seed)
    for L in map(int, args.lengths.split(",")):
        out = block_error_rates(e_A, e_B, L, rng)
        r = Rate(out["wrong"], out["accepted"])
        lo, hi = r.ci()
        print(f"L={L:2d}  kept {out['accepted']:6d}/{out['blocks']:6d}  wrong {r.estimate:.4f}  [{lo:.4f}, {hi:.4f}]")


if __name__ == "__main__":
    main()
