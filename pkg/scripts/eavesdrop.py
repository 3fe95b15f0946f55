#!/usr/bin/env python3
"""Passive strategy hit rates at the defaults and in a bit-balanced regime."""

import argparse

from deeprandom.adversary import measure_advantage, strategy_suite
from deeprandom.core import ProtocolParams
from deeprandom.rounds import simulate_rounds

REGIMES = {
    "defaults": ProtocolParams(),
    "balanced": ProtocolParams(n=256, k=4.0, K=1.5),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name, params in REGIMES.items():
        rounds = simulate_rounds(params, args.rounds, args.seed)
        ones = sum(r.e_B for r in rounds) / len(rounds)
        print(f"{name}: n={params.n} k={params.k} K={params.K}  P(e_B=1)={ones:.3f}")
        for s in strategy_suite():
            out = measure_advantage(s, params, len(rounds), rounds=rounds)
            lo, hi = out["p_agree_xiB"]["ci_low"], out["p_agree_xiB"]["ci_high"]
            print(f"  {s.name:15s} P(hit)={out['p_agree_xiB']['estimate']:.4f}  [{lo:.4f}, {hi:.4f}]")


if __name__ == "__main__":
    main()
