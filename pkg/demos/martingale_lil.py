"""Law of the iterated logarithm for a weighted martingale.

For unit weights and Rademacher steps, |U_n| / sqrt(2 tau_n ln ln tau_n)
should stay near or below 1 for large n.

Run: python3 demos/martingale_lil.py [--horizon N] [--seeds K]
"""

from __future__ import annotations

import argparse

import numpy as np

from dsalab import decomp


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=1_000_000)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    window = (args.horizon // 10, args.horizon - 1)
    sups = []
    for seed in range(args.seeds):
        res = decomp.martingale_lil_test(decomp.rademacher, np.ones(args.horizon), args.horizon,
                                         np.random.default_rng(seed), window=window)
        sups.append(res.sup_normalized)
        print(f"seed {seed:>2}: sup over n in [{window[0]}, {window[1]}] = {res.sup_normalized:.3f}")
    print(f"median {np.median(sups):.3f}, max {max(sups):.3f}, "
          f"{sum(v <= 1.3 for v in sups)}/{len(sups)} at or below 1.3")


if __name__ == "__main__":
    main()
