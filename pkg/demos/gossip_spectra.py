"""Stationary vectors and disagreement projectors of a few gossip matrices.

Run: python3 demos/gossip_spectra.py
"""

from __future__ import annotations

import numpy as np

from dsalab import spectral


def describe(name: str, g: spectral.GossipMatrix) -> None:
    pi = spectral.stationary_vector(g).pi
    q = spectral.projector(pi).q
    print(f"{name:>10}: pi = {np.round(pi, 3)}, doubly stochastic = {g.doubly_stochastic}, "
          f"|Q^2 - Q| = {np.abs(q @ q - q).max():.1e}, "
          f"second eigenvalue modulus = {spectral.gossip_contraction(g):.3f}")


def main() -> None:
    m = 5
    describe("ring", spectral.ring_gossip(m))
    describe("complete", spectral.complete_gossip(m))
    describe("broadcast", spectral.broadcast_gossip(m))
    describe("random", spectral.random_gossip(m, np.random.default_rng(0)))

    # a periodic matrix is rejected
    try:
        spectral.validate_gossip([[0.0, 1.0], [1.0, 0.0]])
    except spectral.Periodic as exc:
        print(f"periodic 2-cycle rejected: {exc}")


if __name__ == "__main__":
    main()
