"""Sine chain: how the initial error size relates to the certified radius and to convergence.

For each scale s the initial estimate is truth + s * (1, -1); the script reports
sqrt(V(0)), the measured radius, the entry time and the verdict.
"""

import argparse

import numpy as np

from ekflab.scenarios import get_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--t-end", type=float, default=50.0)
    args = ap.parse_args()

    base = get_scenario("sine-chain-exact")
    truth = np.asarray(base.truth_x0)
    print(f"{'scale':>8s}{'sqrt V0':>12s}{'radius':>12s}{'entry':>10s}{'rate':>10s}  verdict")
    for s in args.scales:
        cfg = get_scenario("sine-chain-exact", {"xhat0": (truth + s * np.array([1.0, -1.0])).tolist(),
                                                "integrator": {"t_end": args.t_end}, "expected": "none"})
        run, rep = run_scenario(cfg)
        entry = "-" if rep.entry_time is None else f"{rep.entry_time:.2f}"
        rate = "-" if rep.decay_rate is None else f"{rep.decay_rate:.3f}"
        print(f"{s:>8g}{rep.sqrt_V0:>12.3e}{rep.radius:>12.3e}{entry:>10s}{rate:>10s}  {rep.verdict}")


if __name__ == "__main__":
    main()
