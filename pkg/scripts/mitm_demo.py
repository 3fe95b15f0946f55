#!/usr/bin/env python3
"""Sacrifice attack and full relay against both verification codes."""

import argparse

import numpy as np

from deeprandom.adversary import mitm_full_relay, sacrifice_trial
from deeprandom.authp import AuthSecret
from deeprandom.core import ProtocolParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    # short sessions: 128 rounds of single-bit blocks
    params = ProtocolParams(n=16, k=16.0, K=3.0, L=1, L_M=0, assumed_accept=1.0)
    rng = np.random.default_rng(args.seed)
    tally = {"flawed": 0, "robust": 0, "relay": 0}
    for trial in range(args.trials):
        s = AuthSecret.random(params.H_s, rng)
        for variant in ("flawed", "robust"):
            out, _ = sacrifice_trial(params, s, [args.seed, trial], variant)
            tally[variant] += out.B.verified
        tally["relay"] += not mitm_full_relay(params, s, [args.seed, trial]).detected
    n = args.trials
    print(f"sacrifice vs flawed code: B accepts {tally['flawed']}/{n}")
    print(f"sacrifice vs robust code: B accepts {tally['robust']}/{n}")
    print(f"full relay with guessed secret: undetected {tally['relay']}/{n}")


if __name__ == "__main__":
    main()
