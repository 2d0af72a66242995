"""Command-line front end: ``python -m ekflab {run,sweep,gramian,diagnose,validate}``.

Exit codes: 0 success (verdict matches expectation), 1 verdict mismatch or
failed check, 2 usage or execution error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import diagnose
from .filter import FilterError, FilterRun, IntegrationError
from .gramian import GramianPair, t_matrix
from .obsform import StructureError, box_samples, validate_structure
from .scenarios import (ALIASES, CATALOG, ScenarioConfig, expectation_met, get_scenario, make_system,
                        run_scenario)

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2
SWEEP_PARAMS = ("xhat0_offset", "xhat0", "theta", "dt")
RESIDUAL_TOL = 1e-9


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    tool_version: str
    config_digest: str
    scenario: str
    outputs: dict
    duration_s: float
    verdict: str
    expected: str
    seed: int | None = None


def config_digest(config: ScenarioConfig) -> str:
    return hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest()


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("EKFLAB_OUTPUT_DIR") or "ekflab-output")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
    integ = dict(overrides.get("integrator", {}))
    if getattr(args, "dt", None) is not None:
        integ["dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        integ["t_end"] = args.t_end
    if integ:
        overrides["integrator"] = integ
    if getattr(args, "expect", None) is not None:
        overrides["expected"] = args.expect
    return overrides


def _scenario_from_args(args) -> ScenarioConfig:
    overrides = _load_overrides(args)
    name = args.scenario or overrides.pop("scenario", None)
    overrides.pop("scenario", None)
    if not name:
        raise UsageError("no scenario given")
    try:
        return get_scenario(name, overrides)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def execute(config: ScenarioConfig, out_dir: Path, fmt: str = "csv", seed: int | None = None) -> RunManifest:
    """Run one scenario and persist trajectory, run file, diagnostics and manifest."""
    start = time.perf_counter()
    run, report = run_scenario(config)
    duration = time.perf_counter() - start
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"run": "run.json", "diagnostics": "diagnostics.json", "manifest": "manifest.json"}
    if fmt == "json":
        outputs["trajectory"] = "trajectory.json"
        _write(out_dir / "trajectory.json", run.to_json())
    else:
        outputs["trajectory"] = "trajectory.csv"
        _write(out_dir / "trajectory.csv", run.to_csv())
    _write(out_dir / "run.json", run.to_json())
    _write(out_dir / "diagnostics.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = RunManifest(__version__, config_digest(config), config.name, outputs, duration,
                           report.verdict, config.expected, seed)
    _write(out_dir / "manifest.json", json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_run(args) -> int:
    config = _scenario_from_args(args)
    out_dir = output_root(args.output_dir) / config.name
    manifest = execute(config, out_dir, args.format, args.seed)
    print(f"{config.name}: verdict={manifest.verdict} expected={config.expected} -> {out_dir}")
    return EXIT_OK if expectation_met(config, manifest.verdict) else EXIT_MISMATCH


def parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.replace(" ", "").split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"invalid grid {text!r}") from exc
    if not grid:
        raise UsageError("empty grid")
    return grid


def sweep_point(config: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """``config`` with one sweep parameter set and the expectation cleared."""
    config = replace(config, expected="none")
    if parameter == "xhat0_offset":
        return replace(config, xhat0=(np.asarray(config.truth_x0, dtype=float) + value).tolist())
    if parameter == "xhat0":
        return replace(config, xhat0=np.full(len(config.xhat0), value).tolist())
    if parameter == "theta":
        system = config.build_system()
        if system.canonical is None:
            raise UsageError("theta sweep needs a system in observable form")
        return replace(config, P0=t_matrix(system.canonical.block_lengths, value).tolist())
    if parameter == "dt":
        base = config.integrator
        stride = max(1, int(round(base.dt * base.sample_stride / value)))
        return replace(config, integrator=replace(base, dt=value, sample_stride=stride))
    raise UsageError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMS}")


def _sweep_worker(item):
    config, value = item
    run, report = run_scenario(config)
    return {"value": value, "verdict": report.verdict, "final_error": float(run.error_norm[-1]),
            "decay_rate": report.decay_rate}


def run_sweep(config: ScenarioConfig, parameter: str, grid: list[float], workers: int = 1) -> list[dict]:
    if not grid:
        raise UsageError("empty grid")
    items = [(sweep_point(config, parameter, v), v) for v in grid]
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_worker, items))
    return [_sweep_worker(it) for it in items]


def sweep_csv(rows: list[dict], parameter: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([parameter, "verdict", "final_error", "decay_rate"])
    for r in rows:
        rate = "" if r["decay_rate"] is None else repr(r["decay_rate"])
        w.writerow([repr(float(r["value"])), r["verdict"], repr(r["final_error"]), rate])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    config = _scenario_from_args(args)
    grid = parse_grid(args.grid)
    workers = args.workers if args.workers is not None else min(4, os.cpu_count() or 1)
    rows = run_sweep(config, args.param, grid, workers)
    out = output_root(args.output_dir) / f"{config.name}-sweep-{args.param}" / "summary.csv"
    text = sweep_csv(rows, args.param)
    _write(out, text)
    sys.stdout.write(text)
    return EXIT_OK


def _parse_blocks(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").strip("()[]").split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"invalid blocks {text!r}") from exc


def _fmt_matrix(M: np.ndarray) -> str:
    cells = [[f"{v:.10g}" for v in row] for row in M]
    width = max(len(c) for row in cells for c in row)
    return "\n".join("  " + " ".join(c.rjust(width) for c in row) for row in cells)


def cmd_gramian(args) -> int:
    try:
        pair = GramianPair.build(_parse_blocks(args.blocks), args.theta)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = pair.residuals()
    if args.format == "json":
        print(json.dumps(pair.to_dict(), indent=2))
    else:
        print(f"blocks = {list(pair.block_lengths)}, theta = {pair.theta:g}")
        print("S(theta) =")
        print(_fmt_matrix(pair.S))
        print("T(theta) =")
        print(_fmt_matrix(pair.T))
        print(f"lyapunov residual = {res['lyapunov']:.3e}")
        print(f"riccati residual  = {res['riccati']:.3e}")
    ok = res["lyapunov"] <= RESIDUAL_TOL and res["riccati"] <= RESIDUAL_TOL
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_diagnose(args) -> int:
    path = Path(args.run_file)
    try:
        run = FilterRun.from_json(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read run file {path}: {exc}") from exc
    L = args.L if args.L is not None else run.meta.get("L")
    if L is None:
        raise UsageError("run file has no L; pass --L")
    m7 = args.m7 if args.m7 is not None else run.meta.get("m7")
    report = diagnose(run, float(L), None if m7 is None else float(m7))
    out = Path(args.output) if args.output else path.with_name("diagnostics.json")
    _write(out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    name = args.target
    try:
        if name in CATALOG or name in ALIASES:
            system = get_scenario(name).build_system()
        else:
            system = make_system(name)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    if system.canonical is None:
        raise UsageError(f"{name} is not declared in observable form")
    samples = box_samples(system, args.samples, args.box)
    try:
        report = validate_structure(system, samples, args.tol, box=(-args.box, args.box))
    except StructureError as exc:
        raise UsageError(str(exc)) from exc
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(f"{name}: {'pass' if report.passed else 'FAIL'}")
        print(f"  forbidden partial max  {report.forbidden_partial_max:.3e}")
        print(f"  lipschitz quotient     {report.lipschitz_quotient:.6g} (declared {report.declared_lipschitz_L:g})")
        print(f"  second derivative      {report.second_derivative_bound:.6g} "
              f"(declared {report.declared_second_derivative_L:g})")
        for v in report.violations[:10]:
            print(f"  violation: {v}")
    return EXIT_OK if report.passed else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ekflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("scenario", nargs="?", help="catalog name; see README")
        p.add_argument("--config", help="JSON file merged over catalog defaults")
        p.add_argument("--output-dir", help="output root (default $EKFLAB_OUTPUT_DIR or ./ekflab-output)")
        p.add_argument("--dt", type=float)
        p.add_argument("--t-end", type=float)
        p.add_argument("--seed", type=int, help="reserved; recorded in the manifest only")

    p = sub.add_parser("run", help="run one scenario")
    scenario_flags(p)
    p.add_argument("--expect", choices=("converge", "diverge", "none"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    scenario_flags(p)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gramian", help="print S(theta), T(theta) and residuals")
    p.add_argument("--blocks", required=True, help="e.g. 2,3")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_gramian)

    p = sub.add_parser("diagnose", help="diagnostics for a stored run.json")
    p.add_argument("run_file")
    p.add_argument("--L", type=float)
    p.add_argument("--m7", type=float)
    p.add_argument("--output")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("validate", help="check observable-form structure of a system")
    p.add_argument("target", help="system or scenario name")
    p.add_argument("--box", type=float, default=5.0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (FilterError, IntegrationError, StructureError) as exc:
        print(f"execution error: {exc}", file=sys.stderr)
    return EXIT_ERROR
