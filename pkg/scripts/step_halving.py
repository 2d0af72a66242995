"""Final error of every shipped scenario at dt and dt/2, with the relative change."""

import argparse

from ekflab.scenarios import get_scenario, run_scenario, scenario_names


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()
    for name in scenario_names():
        errs = []
        for dt, stride in ((args.dt, 10), (args.dt / 2, 20)):
            run, rep = run_scenario(get_scenario(name, {"integrator": {"dt": dt, "sample_stride": stride}}))
            errs.append(float(run.error_norm[-1]))
        scale = max(map(abs, errs))
        rel = 0.0 if scale == 0 else abs(errs[0] - errs[1]) / scale
        print(f"{name:<24s}{rep.verdict:<12s}{errs[0]:>14.6e}{errs[1]:>14.6e}{rel:>10.1e}")


if __name__ == "__main__":
    main()
