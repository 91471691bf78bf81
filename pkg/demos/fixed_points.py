"""Where distributed TD(0) converges.

The 2-state instance has a hand-checkable answer (theta* = 12/11). On the
broadcast instance the stationary vector of W is far from uniform, and the
iterates settle at 1'(pi B A^-1) rather than at the uniform-average solution.

Run: python3 demos/fixed_points.py [--horizon N]
"""

from __future__ import annotations

import argparse

import numpy as np

from dsalab import decomp, harness, td
from dsalab.engine import NoiseModel, RecorderSpec, run_dsa


def final_state(inst, schedule, horizon, noise):
    trace = run_dsa(np.zeros_like(inst.truth.x_star), inst.gossip, inst.drive(), noise,
                    schedule, horizon, RecorderSpec(keep_states=True))
    return trace.states[horizon]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=200_000)
    args = ap.parse_args()

    two = td.two_state_instance()
    s = harness.resolve_schedule({"kind": "type1", "alpha0_scale": 2.0, "start_index": "auto"},
                                 two.truth.a_mat)
    x = final_state(two, s, args.horizon, NoiseModel(kind="td", seed=0, sampler=two.sampler()))
    print(f"2-state: theta* = {two.truth.theta_star[0]:.6f} (12/11 = {12 / 11:.6f}), "
          f"TD estimate after {args.horizon} steps = {x[0, 0]:.6f}")

    inst = td.broadcast_instance()
    truth = inst.truth
    s = harness.resolve_schedule({"kind": "type1", "alpha0_scale": 2.0, "start_index": "auto"},
                                 truth.a_mat, inst.gossip)
    theta_u = np.linalg.solve(truth.a_mat.T, np.full(inst.mdp.m, 1 / inst.mdp.m) @ truth.b_mat)
    x = final_state(inst, s, args.horizon, NoiseModel(kind="td", seed=0, sampler=inst.sampler()))
    print(f"broadcast: pi = {np.round(inst.pi, 3)}")
    print(f"  theta*         = {np.round(truth.theta_star, 4)}")
    print(f"  uniform theta  = {np.round(theta_u, 4)}")
    print(f"  agent average  = {np.round(x.mean(axis=0), 4)}")
    print(f"  |x_N - 1'theta*| = {decomp.operator_norm(x - truth.x_star):.2e}, "
          f"|x_N - 1'theta_uniform| = {decomp.operator_norm(x - theta_u):.2e}")


if __name__ == "__main__":
    main()
