"""Fitted convergence rates of a multi-seed experiment against theory.

Runs the 3-agent, 5-state instance under a Type-gamma schedule, prints the
log-log slopes of the agreement and disagreement errors with the running
supremum of the LIL-normalised error.

Run: python3 demos/rates.py [--horizon N] [--seeds K] [--gamma G]
"""

from __future__ import annotations

import argparse
import tempfile

from dsalab import harness
from dsalab.harness import ExperimentConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--gamma", type=float, default=0.7)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        instance={"generate": {"n_states": 5, "n_agents": 3, "n_features": 2, "seed": 1}},
        schedule={"kind": "type_gamma", "c_scale": 1.0, "gamma_exp": args.gamma},
        horizon=args.horizon, seeds=list(range(args.seeds)), window=[1000, args.horizon])
    with tempfile.TemporaryDirectory() as out:
        agg = harness.run_experiment(cfg, out=out)
    text, _ = harness.rates_report(agg)
    print(text)


if __name__ == "__main__":
    main()
