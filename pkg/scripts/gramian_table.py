"""Print S(theta), T(theta) and identity residuals over a grid of block structures and gains."""

import argparse

import numpy as np

from ekflab.gramian import GramianPair


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", nargs="+", default=["1", "2", "3", "2,3"])
    ap.add_argument("--thetas", type=float, nargs="+", default=[0.5, 1.0, 2.0, 10.0])
    ap.add_argument("--show", action="store_true", help="print the matrices too")
    args = ap.parse_args()

    print(f"{'blocks':<10s}{'theta':>8s}{'lyapunov':>12s}{'riccati':>12s}{'|ST-I|':>12s}{'cond S':>12s}")
    for b in args.blocks:
        blocks = [int(v) for v in b.split(",")]
        for theta in args.thetas:
            pair = GramianPair.build(blocks, theta)
            res = pair.residuals()
            n = sum(blocks)
            inv_err = np.linalg.norm(pair.S @ pair.T - np.eye(n))
            print(f"{b:<10s}{theta:>8g}{res['lyapunov']:>12.2e}{res['riccati']:>12.2e}"
                  f"{inv_err:>12.2e}{np.linalg.cond(pair.S):>12.3g}")
            if args.show:
                print(pair.S)
                print(pair.T)


if __name__ == "__main__":
    main()
