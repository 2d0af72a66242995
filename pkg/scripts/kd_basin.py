"""Map the basin of the bistable scalar (kd) scenario: verdict and final error over a grid of initial estimates.

    python scripts/kd_basin.py --lo -2 --hi 2 --n 41 --out kd_basin.csv
"""

import argparse

import numpy as np

from ekflab.cli import run_sweep, sweep_csv
from ekflab.scenarios import get_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=-2.0)
    ap.add_argument("--hi", type=float, default=2.0)
    ap.add_argument("--n", type=int, default=41)
    ap.add_argument("--P0", type=float, default=1.0)
    ap.add_argument("--out")
    args = ap.parse_args()

    config = get_scenario("kd-diverge", {"P0": [[args.P0]]})
    grid = np.linspace(args.lo, args.hi, args.n).tolist()
    rows = run_sweep(config, "xhat0", grid)
    for r in rows:
        print(f"xhat0 = {r['value']:+.3f}  {r['verdict']:<12s} final error {r['final_error']:.3e}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(sweep_csv(rows, "xhat0"))


if __name__ == "__main__":
    main()
