#!/usr/bin/env python3
"""Spread of V_A - V_B over favorable rounds as n grows."""

import argparse
import math

import numpy as np

from deeprandom.core import ProtocolParams
from deeprandom.rounds import simulate_rounds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sizes", default="16,32,64,128")
    args = ap.parse_args()
    prev = None
    for n in map(int, args.sizes.split(",")):
        params = ProtocolParams(n=n)
        d = [r.V_A - r.V_B for r in simulate_rounds(params, args.rounds, args.seed) if r.favorable]
        sd = float(np.std(d, ddof=1))
        note = "" if prev is None else f"  ratio to previous {prev / sd:.2f} (1/sqrt scaling: {math.sqrt(n / prev_n):.2f})"
        print(f"n={n:4d}  favorable={len(d):5d}  std={sd:.5f}{note}")
        prev, prev_n = sd, n


if __name__ == "__main__":
    main()
