"""Catalog of example systems and named experiments."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numba import njit

from ._kernel import MAT_FN, VEC_FN
from .diagnostics import DiagnosticsReport, diagnose
from .filter import FilterConfig, FilterRun, IntegratorSettings, run_ekf
from .obsform import CanonicalStructure, System

# --- bistable scalar example: xdot = x(1 - x^2), y = x^2 - x/2 -----------------------


@njit(VEC_FN, cache=True)
def _kd_drift(x, u):
    return x * (1.0 - x * x)


@njit(VEC_FN, cache=True)
def _kd_output(x, u):
    return x * x - 0.5 * x


@njit(MAT_FN, cache=True)
def _kd_drift_jac(x, u):
    out = np.empty((1, 1))
    out[0, 0] = 1.0 - 3.0 * x[0] * x[0]
    return out


@njit(MAT_FN, cache=True)
def _kd_output_jac(x, u):
    out = np.empty((1, 1))
    out[0, 0] = 2.0 * x[0] - 0.5
    return out


def krener_duarte() -> System:
    """Scalar system with stable equilibria at +-1 and an output that cannot tell 1 from -1/2."""
    return System(1, 0, 1, _kd_drift, _kd_output, _kd_drift_jac, _kd_output_jac,
                  name="krener-duarte", compiled=True)


# --- sine chain: x1' = x2, x2' = sin(x1), y = x1 ----------------------------


@njit(VEC_FN, cache=True)
def _sc_drift(x, u):
    out = np.empty(2)
    out[0] = x[1]
    out[1] = np.sin(x[0])
    return out


@njit(VEC_FN, cache=True)
def _sc_output(x, u):
    out = np.empty(1)
    out[0] = x[0]
    return out


@njit(MAT_FN, cache=True)
def _sc_drift_jac(x, u):
    out = np.zeros((2, 2))
    out[0, 1] = 1.0
    out[1, 0] = np.cos(x[0])
    return out


@njit(MAT_FN, cache=True)
def _sc_output_jac(x, u):
    out = np.zeros((1, 2))
    out[0, 0] = 1.0
    return out


def _sc_fbar(x, u):
    return np.array([0.0, np.sin(x[0])])


def _zero_hbar(u):
    return np.zeros(1)


def sine_chain() -> System:
    structure = CanonicalStructure((2,), 1.0, 1.0, _sc_fbar, _zero_hbar)
    return System(2, 0, 1, _sc_drift, _sc_output, _sc_drift_jac, _sc_output_jac,
                  canonical=structure, name="sine-chain", compiled=True)


# --- linear observable pair [[0, 1], [a1, a2]], y = x1 ----------------------

_linear_cache: dict[tuple[float, float], System] = {}


def linear_observable(a1: float, a2: float) -> System:
    """Two-state linear system in observable form with ``fbar = (0, a1 x1 + a2 x2)``."""
    key = (float(a1), float(a2))
    if key in _linear_cache:
        return _linear_cache[key]
    a1, a2 = key

    # closures freeze a1, a2 as compile-time constants
    @njit(VEC_FN)
    def drift(x, u):
        out = np.empty(2)
        out[0] = x[1]
        out[1] = a1 * x[0] + a2 * x[1]
        return out

    @njit(MAT_FN)
    def drift_jac(x, u):
        out = np.zeros((2, 2))
        out[0, 1] = 1.0
        out[1, 0] = a1
        out[1, 1] = a2
        return out

    def fbar(x, u):
        return np.array([0.0, a1 * x[0] + a2 * x[1]])

    lip = max(float(np.hypot(a1, a2)), 1e-12)
    structure = CanonicalStructure((2,), lip, 1e-12, fbar, _zero_hbar)
    system = System(2, 0, 1, drift, _sc_output, drift_jac, _sc_output_jac,
                    canonical=structure, name=f"linear-observable({a1:g},{a2:g})", compiled=True)
    _linear_cache[key] = system
    return system


SYSTEMS = {
    "krener-duarte": lambda **kw: krener_duarte(),
    "sine-chain": lambda **kw: sine_chain(),
    "linear-observable": lambda a1=0.0, a2=0.0: linear_observable(a1, a2),
}


def make_system(name: str, params: dict | None = None) -> System:
    if name not in SYSTEMS:
        raise KeyError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}")
    return SYSTEMS[name](**(params or {}))


# --- scenario configs -----------------------------------------------------

_EXPECT_TO_VERDICT = {"converge": "converged", "diverge": "diverged"}


@dataclass
class ScenarioConfig:
    name: str
    system: str
    truth_x0: list
    xhat0: list
    P0: list
    G: list
    system_params: dict = field(default_factory=dict)
    u: Any = None
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    form: str = "both"
    expected: str = "none"
    L: float | None = None

    def __post_init__(self):
        if self.expected not in ("converge", "diverge", "none"):
            raise ValueError(f"expected must be converge, diverge or none, got {self.expected!r}")
        if isinstance(self.integrator, dict):
            self.integrator = IntegratorSettings(**self.integrator)
        make_system(self.system, self.system_params)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "system": self.system, "system_params": dict(self.system_params),
            "truth_x0": list(map(float, np.ravel(self.truth_x0))),
            "xhat0": list(map(float, np.ravel(self.xhat0))),
            "P0": np.asarray(self.P0, dtype=float).tolist(), "G": np.asarray(self.G, dtype=float).tolist(),
            "u": self.u, "form": self.form, "expected": self.expected, "L": self.L,
            "integrator": {
                "method": self.integrator.method, "dt": self.integrator.dt,
                "abs_tol": self.integrator.abs_tol, "rel_tol": self.integrator.rel_tol,
                "t_end": self.integrator.t_end, "sample_stride": self.integrator.sample_stride,
            },
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def build_system(self) -> System:
        return make_system(self.system, self.system_params)

    def filter_config(self) -> FilterConfig:
        return FilterConfig(np.asarray(self.G, dtype=float), np.asarray(self.xhat0, dtype=float),
                            np.asarray(self.P0, dtype=float), self.form, self.integrator)

    def lipschitz(self, system: System | None = None) -> float:
        if self.L is not None:
            return float(self.L)
        system = system or self.build_system()
        if system.canonical is None:
            raise ValueError(f"scenario {self.name!r} needs a declared L (system not canonical)")
        return system.canonical.L


CATALOG: dict[str, dict] = {
    "kd-diverge": {
        "system": "krener-duarte", "truth_x0": [1.0], "xhat0": [-0.75], "P0": [[1.0]], "G": [[1.0]],
        "expected": "diverge", "L": 12.0, "form": "covariance",
    },
    "kd-converge": {
        "system": "krener-duarte", "truth_x0": [1.0], "xhat0": [0.9], "P0": [[1.0]], "G": [[1.0]],
        "expected": "converge", "L": 12.0, "form": "covariance",
    },
    "kd-exact": {
        "system": "krener-duarte", "truth_x0": [1.0], "xhat0": [1.0], "P0": [[1.0]], "G": [[1.0]],
        "expected": "converge", "L": 12.0, "form": "covariance",
    },
    "linear-a2-positive": {
        "system": "linear-observable", "system_params": {"a1": 1.0, "a2": 1.0},
        "truth_x0": [0.0, 0.0], "xhat0": [-1.0, -1.0], "P0": [[1.0, 0.0], [0.0, 1.0]],
        "G": [[1.0, 0.0], [0.0, 1.0]], "expected": "converge",
    },
    "double-integrator": {
        "system": "linear-observable", "system_params": {"a1": 0.0, "a2": 0.0},
        "truth_x0": [0.0, 0.0], "xhat0": [-1.0, 0.0], "P0": [[1.0, 0.0], [0.0, 1.0]],
        "G": [[1.0, 0.0], [0.0, 1.0]], "expected": "converge",
    },
    "sine-chain-small-error": {
        "system": "sine-chain", "truth_x0": [0.3, -0.2], "xhat0": [0.0, 0.0],
        "P0": [[1.0, 0.0], [0.0, 1.0]], "G": [[1.0, 0.0], [0.0, 1.0]], "expected": "converge",
    },
    "sine-chain-exact": {
        "system": "sine-chain", "truth_x0": [0.3, -0.2], "xhat0": [0.3, -0.2],
        "P0": [[1.0, 0.0], [0.0, 1.0]], "G": [[1.0, 0.0], [0.0, 1.0]], "expected": "converge",
    },
}

ALIASES = {"kd": "kd-diverge", "sine-chain": "sine-chain-small-error", "linear": "linear-a2-positive"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "u":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenario_names() -> list[str]:
    return sorted(CATALOG)


def get_scenario(name: str, overrides: dict | None = None) -> ScenarioConfig:
    """Catalog defaults for ``name`` with ``overrides`` merged on top."""
    key = ALIASES.get(name, name)
    if key not in CATALOG:
        raise KeyError(f"unknown scenario {name!r}; known: {scenario_names()}")
    d = _merge({"name": key, **CATALOG[key]}, overrides or {})
    return ScenarioConfig.from_dict(d)


def expectation_met(config: ScenarioConfig, verdict: str) -> bool:
    if config.expected == "none":
        return True
    return _EXPECT_TO_VERDICT[config.expected] == verdict


def run_scenario(config: ScenarioConfig) -> tuple[FilterRun, DiagnosticsReport]:
    system = config.build_system()
    run = run_ekf(system, np.asarray(config.truth_x0, dtype=float), config.u, config.filter_config())
    run.meta.update({"scenario": config.name, "L": config.lipschitz(system), "expected": config.expected})
    report = diagnose(run, config.lipschitz(system))
    return run, report
