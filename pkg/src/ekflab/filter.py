"""Continuous-time extended Kalman filter integrated jointly with the truth.

The augmented state ``[x, xhat, vec(P)?, vec(Q)?]`` is advanced as one ODE so
the output fed to the filter at every Runge-Kutta stage is the output of the
concurrently integrated truth.  The estimate obeys

    xhat' = f(xhat, u) + P C' (y - h(xhat, u))
    P'    = A P + P A' + Gamma - P C' C P
    Q'    = -A' Q - Q A - Q Gamma Q + C' C        (Q = P^{-1})

with ``A, C`` the Jacobians at ``(xhat, u)`` and ``Gamma = G G'``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .obsform import System

Form = Literal["covariance", "information", "both"]
_MODES = {"covariance": 0, "information": 1, "both": 2}

BLOWUP_ERROR = 1e6
CONVERGED_FRACTION = 1e-6
DIVERGED_FRACTION = 1e-1


class FilterError(RuntimeError):
    """Loss of positive definiteness or another unrecoverable filter failure."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t={time:.6g})")
        self.time = time


class IntegrationError(RuntimeError):
    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t={time:.6g})")
        self.time = time


class InputSignal:
    """Deterministic input ``u(t)``: constant, zero-order-hold table, or callable."""

    def __init__(self, kind: str, *, value=None, times=None, values=None, fun: Callable | None = None):
        self.kind = kind
        if kind == "constant":
            self.times = np.zeros(1)
            self.values = np.atleast_2d(np.asarray(value, dtype=float).reshape(1, -1))
        elif kind == "piecewise":
            self.times = np.ascontiguousarray(times, dtype=float)
            self.values = np.ascontiguousarray(values, dtype=float).reshape(len(self.times), -1)
            if len(self.times) == 0 or np.any(np.diff(self.times) <= 0):
                raise ValueError("piecewise input times must be nonempty and increasing")
        elif kind == "callable":
            if fun is None:
                raise ValueError("callable input needs fun")
            self.fun = fun
        else:
            raise ValueError(f"unknown input kind {kind!r}")

    @classmethod
    def zero(cls, m: int) -> "InputSignal":
        return cls("constant", value=np.zeros(m))

    @classmethod
    def from_spec(cls, spec, m: int) -> "InputSignal":
        """Build from ``None``, a number/list (constant), a dict, or a callable."""
        if spec is None:
            return cls.zero(m)
        if isinstance(spec, InputSignal):
            return spec
        if callable(spec):
            return cls("callable", fun=spec)
        if isinstance(spec, dict):
            kind = spec.get("kind", "constant")
            if kind == "constant":
                return cls("constant", value=spec.get("value", np.zeros(m)))
            if kind == "piecewise":
                return cls("piecewise", times=spec["times"], values=spec["values"])
            raise ValueError(f"unknown input kind {kind!r}")
        return cls("constant", value=spec)

    @property
    def tabular(self) -> bool:
        return self.kind != "callable"

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "callable":
            return np.ascontiguousarray(self.fun(t), dtype=float).reshape(-1)
        k = max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)
        return self.values[k].copy()

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.values[0].tolist()}
        if self.kind == "piecewise":
            return {"kind": "piecewise", "times": self.times.tolist(), "values": self.values.tolist()}
        return {"kind": "callable"}


@dataclass(frozen=True)
class IntegratorSettings:
    method: Literal["rk4_fixed", "rk45_adaptive"] = "rk4_fixed"
    dt: float = 1e-3
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    t_end: float = 50.0
    sample_stride: int = 10

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "rk45_adaptive"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if not (self.dt > 0 and self.t_end > 0 and self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("dt, t_end and tolerances must be positive")
        if int(self.sample_stride) < 1:
            raise ValueError("sample_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


def _is_spd(M: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class FilterConfig:
    G: np.ndarray
    xhat0: np.ndarray
    P0: np.ndarray
    form: Form = "covariance"
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        xhat0 = np.atleast_1d(np.asarray(self.xhat0, dtype=float))
        P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "xhat0", xhat0)
        object.__setattr__(self, "P0", P0)
        n = xhat0.size
        if self.form not in _MODES:
            raise ValueError(f"unknown form {self.form!r}")
        if G.shape[0] != n or P0.shape != (n, n):
            raise ValueError("G, xhat0 and P0 dimensions are inconsistent")
        if not np.allclose(P0, P0.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P0).max())) or not _is_spd(P0):
            raise ValueError("P0 must be symmetric positive definite")
        if self.form != "covariance":
            if G.shape[0] != G.shape[1]:
                raise ValueError("information form requires a square G")
            sv = np.linalg.svd(G, compute_uv=False)
            if sv[-1] < 1e-10 * sv[0]:
                raise ValueError("information form requires an invertible G")

    @property
    def Gamma(self) -> np.ndarray:
        return self.G @ self.G.T


@dataclass
class FilterRun:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xhat: np.ndarray
    innovation: np.ndarray
    error_norm: np.ndarray
    V: np.ndarray
    P: np.ndarray | None = None
    Q: np.ndarray | None = None
    termination: str = "completed"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def state_dim(self) -> int:
        return self.x.shape[1]

    def covariances(self) -> np.ndarray:
        return self.P if self.P is not None else np.linalg.inv(self.Q)

    def informations(self) -> np.ndarray:
        return self.Q if self.Q is not None else np.linalg.inv(self.P)

    def covariance_eigenvalues(self) -> np.ndarray:
        if self.P is not None:
            return np.linalg.eigvalsh(self.P)
        return 1.0 / np.linalg.eigvalsh(self.Q)[:, ::-1]

    # --- serialization -------------------------------------------------
    def csv_header(self) -> list[str]:
        n, p = self.x.shape[1], self.y.shape[1]
        return (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"xhat_{i + 1}" for i in range(n)]
                + [f"y_{i + 1}" for i in range(p)] + ["err", "V", "eigmin_P", "eigmax_P"])

    def to_csv(self) -> str:
        eig = self.covariance_eigenvalues()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for k in range(len(self.times)):
            row = [self.times[k], *self.x[k], *self.xhat[k], *self.y[k],
                   self.error_norm[k], self.V[k], eig[k, 0], eig[k, -1]]
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(), "x": self.x.tolist(), "y": self.y.tolist(),
            "xhat": self.xhat.tolist(), "innovation": self.innovation.tolist(),
            "error_norm": self.error_norm.tolist(), "V": self.V.tolist(),
            "P": None if self.P is None else self.P.tolist(),
            "Q": None if self.Q is None else self.Q.tolist(),
            "termination": self.termination, "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterRun":
        def arr(key):
            return None if d.get(key) is None else np.asarray(d[key], dtype=float)
        return cls(arr("times"), arr("x"), arr("y"), arr("xhat"), arr("innovation"),
                  arr("error_norm"), arr("V"), arr("P"), arr("Q"),
                   d.get("termination", "completed"), d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "FilterRun":
        return cls.from_dict(json.loads(text))


# --- right-hand sides -----------------------------------------------------

def _check_dims(A, C, M, Gamma):
    n = A.shape[0]
    if A.shape != (n, n) or M.shape != (n, n) or Gamma.shape != (n, n) or C.ndim != 2 or C.shape[1] != n:
        raise ValueError("inconsistent matrix dimensions")


def riccati_rhs(A, C, P, Gamma) -> np.ndarray:
    A, C, P, Gamma = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, C, P, Gamma))
    _check_dims(A, C, P, Gamma)
    pc = P @ C.T
    ap = A @ P
    out = ap + ap.T + Gamma - pc @ pc.T
    return 0.5 * (out + out.T)


def information_rhs(A, C, Q, Gamma) -> np.ndarray:
    A, C, Q, Gamma = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, C, Q, Gamma))
    _check_dims(A, C, Q, Gamma)
    qa = Q @ A
    out = -qa.T - qa - Q @ Gamma @ Q + C.T @ C
    return 0.5 * (out + out.T)


def augmented_rhs(system: System, z: np.ndarray, u: np.ndarray, mode: int, Gamma: np.ndarray) -> np.ndarray:
    n = system.state_dim
    nn = n * n
    x = np.ascontiguousarray(z[:n])
    xh = np.ascontiguousarray(z[n:2 * n])
    A = np.atleast_2d(system.drift_jacobian(xh, u))
    C = np.atleast_2d(system.output_jacobian(xh, u))
    innov = np.asarray(system.output(x, u)) - np.asarray(system.output(xh, u))
    off = 2 * n
    parts = [np.asarray(system.drift(x, u), dtype=float)]
    if mode != 1:
        P = z[off:off + nn].reshape(n, n)
        gain = P @ C.T
    else:
        Q = z[off:off + nn].reshape(n, n)
        gain = np.linalg.solve(Q, C.T)
    parts.append(np.asarray(system.drift(xh, u), dtype=float) + gain @ innov)
    if mode != 1:
        parts.append(riccati_rhs(A, C, P, Gamma).ravel())
        off += nn
    if mode != 0:
        Q = z[off:off + nn].reshape(n, n)
        parts.append(information_rhs(A, C, Q, Gamma).ravel())
    return np.concatenate(parts)


def _symmetrize_blocks(z: np.ndarray, n: int, mode: int) -> None:
    nn = n * n
    off = 2 * n
    for _ in range(2 if mode == 2 else 1):
        M = z[off:off + nn].reshape(n, n)
        z[off:off + nn] = (0.5 * (M + M.T)).ravel()
        off += nn


def _step_numpy(system, z, comp, t, dt, mode, Gamma, u_signal):
    u0 = u_signal(t)
    if u_signal.tabular:
        # held inputs stay at the step-start value so grid breakpoints are exact
        uh = u1 = u0
    else:
        uh, u1 = u_signal(t + 0.5 * dt), u_signal(t + dt)
    k1 = augmented_rhs(system, z, u0, mode, Gamma)
    k2 = augmented_rhs(system, z + (0.5 * dt) * k1, uh, mode, Gamma)
    k3 = augmented_rhs(system, z + (0.5 * dt) * k2, uh, mode, Gamma)
    k4 = augmented_rhs(system, z + dt * k3, u1, mode, Gamma)
    # compensated (Kahan) update: increments far below ulp(z) still accumulate
    y = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp
    znew = z + y
    comp[:] = (znew - z) - y
    _symmetrize_blocks(znew, system.state_dim, mode)
    return znew


_STATUS = {0: "completed", 1: "blowup", 2: "nonfinite"}


def _integrate_numpy(system, z, dt, total, stride, mode, Gamma, u_signal):
    n = system.state_dim
    samples = [z.copy()]
    status = 0
    comp = np.zeros_like(z)
    k = 0
    while k < total:
        chunk = min(stride, total - k)
        for j in range(chunk):
            z = _step_numpy(system, z, comp, (k + j) * dt, dt, mode, Gamma, u_signal)
        k += chunk
        if not np.all(np.isfinite(z)):
            status = 2
            break
        samples.append(z.copy())
        if np.linalg.norm(z[:n] - z[n:2 * n]) > BLOWUP_ERROR:
            status = 1
            break
    return np.array(samples), status


def _integrate_compiled(system, z, dt, total, stride, mode, Gamma, u_signal):
    from . import _kernel
    return _kernel.integrate(system.drift, system.output, system.drift_jacobian, system.output_jacobian,
                             np.ascontiguousarray(z), dt, total, stride, system.state_dim, mode,
                             np.ascontiguousarray(Gamma), u_signal.times, u_signal.values, BLOWUP_ERROR)


# --- runs -----------------------------------------------------------------

def _build_run(system: System, times: np.ndarray, Z: np.ndarray, mode: int, u_signal, termination: str,
               meta: dict) -> FilterRun:
    n = system.state_dim
    nn = n * n
    K = len(times)
    x = Z[:, :n].copy()
    xhat = Z[:, n:2 * n].copy()
    off = 2 * n
    P = Q = None
    if mode != 1:
        P = Z[:, off:off + nn].reshape(K, n, n).copy()
        off += nn
    if mode != 0:
        Q = Z[:, off:off + nn].reshape(K, n, n).copy()
    for name, M in (("P", P), ("Q", Q)):
        if M is None:
            continue
        bad = np.flatnonzero(np.linalg.eigvalsh(M)[:, 0] <= 0)
        if bad.size:
            raise FilterError(f"{name} lost positive definiteness", float(times[bad[0]]))
        for k in range(0, K, max(1, K // 50)):
            if not _is_spd(M[k]):
                raise FilterError(f"{name} failed Cholesky", float(times[k]))
    y = np.empty((K, system.output_dim))
    innov = np.empty_like(y)
    for k in range(K):
        u = u_signal(times[k])
        y[k] = system.output(np.ascontiguousarray(x[k]), u)
        innov[k] = y[k] - system.output(np.ascontiguousarray(xhat[k]), u)
    e = x - xhat
    if Q is not None:
        V = np.einsum("ki,kij,kj->k", e, Q, e)
    else:
        V = np.einsum("ki,ki->k", e, np.linalg.solve(P, e[:, :, None])[:, :, 0])
    return FilterRun(times=np.asarray(times, dtype=float), x=x, y=y, xhat=xhat, innovation=innov,
                     error_norm=np.linalg.norm(e, axis=1), V=V, P=P, Q=Q,
                     termination=termination, meta=meta)


def _initial_state(truth_x0, config: FilterConfig, mode: int) -> np.ndarray:
    parts = [np.asarray(truth_x0, dtype=float).ravel(), config.xhat0]
    if mode != 1:
        parts.append(config.P0.ravel())
    if mode != 0:
        Q0 = np.linalg.inv(config.P0)
        parts.append((0.5 * (Q0 + Q0.T)).ravel())
    return np.concatenate(parts)


def run_ekf(system: System, truth_x0, u=None, config: FilterConfig | None = None,
            backend: Literal["auto", "numpy", "compiled"] = "auto") -> FilterRun:
    """Integrate truth and extended Kalman filter together and return sampled series.

    The run stops early (``termination`` = ``"blowup"`` or ``"nonfinite"``) when
    the estimation error exceeds ``BLOWUP_ERROR`` or the state stops being
    finite.  Loss of positive definiteness raises ``FilterError``.
    """
    if config is None:
        raise ValueError("config is required")
    n = system.state_dim
    truth_x0 = np.atleast_1d(np.asarray(truth_x0, dtype=float))
    if truth_x0.size != n or config.xhat0.size != n:
        raise ValueError(f"initial states must have dimension {n}")
    u_signal = InputSignal.from_spec(u, system.input_dim)
    mode = _MODES[config.form]
    Gamma = config.Gamma
    settings = config.integrator
    if Gamma.shape != (n, n):
        raise ValueError("G must have n rows")

    if backend == "auto":
        backend = "compiled" if (system.compiled and u_signal.tabular) else "numpy"
    if backend == "compiled" and not (system.compiled and u_signal.tabular):
        raise ValueError("compiled backend needs a compiled system and a tabular input")

    z0 = _initial_state(truth_x0, config, mode)
    meta = {"form": config.form, "method": settings.method, "dt": settings.dt,
            "t_end": settings.t_end, "sample_stride": settings.sample_stride,
            "backend": backend if settings.method == "rk4_fixed" else "scipy",
            "m7": float(np.linalg.eigvalsh(Gamma)[0])}

    if settings.method == "rk45_adaptive":
        times, Z, status = _integrate_adaptive(system, z0, mode, Gamma, u_signal, settings)
    else:
        integrate = _integrate_compiled if backend == "compiled" else _integrate_numpy
        total, stride = settings.n_steps, int(settings.sample_stride)
        Z, status = integrate(system, z0, settings.dt, total, stride, mode, Gamma, u_signal)
        steps = np.minimum(np.arange(len(Z)) * stride, total)
        times = steps * settings.dt
    if status == 0 and not np.all(np.isfinite(Z[-1])):
        status = 2
    return _build_run(system, times, Z, mode, u_signal, _STATUS[status], meta)


def _integrate_adaptive(system, z0, mode, Gamma, u_signal, settings):
    n = system.state_dim
    t_eval = np.arange(1, settings.n_steps // settings.sample_stride + 1) * settings.dt * settings.sample_stride
    if len(t_eval) == 0 or t_eval[-1] < settings.t_end:
        t_eval = np.append(t_eval, settings.t_end)

    def fun(t, z):
        return augmented_rhs(system, z, u_signal(t), mode, Gamma)

    sol = solve_ivp(fun, (0.0, settings.t_end), z0, method="RK45", t_eval=t_eval,
                    rtol=settings.rel_tol, atol=settings.abs_tol, first_step=settings.dt)
    if sol.status < 0:
        raise IntegrationError(sol.message, float(sol.t[-1]) if len(sol.t) else 0.0)
    samples, times = [z0.copy()], [0.0]
    status = 0
    for j, t in enumerate(sol.t):
        z = sol.y[:, j].copy()
        if not np.all(np.isfinite(z)):
            status = 2
            break
        _symmetrize_blocks(z, n, mode)
        samples.append(z)
        times.append(float(t))
        if np.linalg.norm(z[:n] - z[n:2 * n]) > BLOWUP_ERROR:
            status = 1
            break
    return np.array(times), np.array(samples), status


def simulate_truth(system: System, x0, u=None, integrator: IntegratorSettings | None = None):
    """Open-loop solution of the system; returns ``(times, states, outputs)``."""
    settings = integrator or IntegratorSettings()
    u_signal = InputSignal.from_spec(u, system.input_dim)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x.size != system.state_dim:
        raise ValueError(f"x0 must have dimension {system.state_dim}")

    def f(t, x):
        return np.asarray(system.drift(np.ascontiguousarray(x), u_signal(t)), dtype=float)

    if settings.method == "rk45_adaptive":
        t_eval = np.linspace(0.0, settings.t_end, settings.n_steps // settings.sample_stride + 1)
        sol = solve_ivp(f, (0.0, settings.t_end), x, method="RK45", t_eval=t_eval,
                        rtol=settings.rel_tol, atol=settings.abs_tol, first_step=settings.dt)
        if sol.status < 0 or not np.all(np.isfinite(sol.y)):
            raise IntegrationError(f"truth integration failed: {sol.message}", float(sol.t[-1]))
        states = sol.y.T
        times = sol.t
    else:
        dt, total, stride = settings.dt, settings.n_steps, settings.sample_stride
        times, states = [0.0], [x.copy()]
        for k in range(total):
            t = k * dt
            th, t1 = (t, t) if u_signal.tabular else (t + 0.5 * dt, t + dt)
            k1 = f(t, x)
            k2 = f(th, x + 0.5 * dt * k1)
            k3 = f(th, x + 0.5 * dt * k2)
            k4 = f(t1, x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationError("nonfinite truth state", (k + 1) * dt)
            if (k + 1) % stride == 0 or k + 1 == total:
                times.append((k + 1) * dt)
                states.append(x.copy())
        times, states = np.array(times), np.array(states)
    outputs = np.array([np.asarray(system.output(np.ascontiguousarray(s), u_signal(t)), dtype=float)
                        for t, s in zip(times, states)])
    return times, states, outputs


def linear_system(A, C, name: str = "linear") -> System:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    return System(A.shape[0], 0, C.shape[0],
                  drift=lambda x, u: A @ x, output=lambda x, u: C @ x,
                  drift_jacobian=lambda x, u: A, output_jacobian=lambda x, u: C, name=name)


def kalman_reference(A, C, config: FilterConfig, truth_x0) -> FilterRun:
    """Kalman-Bucy filter for the time-invariant pair ``(A, C)`` with the same integrator."""
    return run_ekf(linear_system(A, C), truth_x0, None, config, backend="numpy")


def classify(run: FilterRun) -> str:
    """Finite-horizon verdict: ``converged``, ``diverged`` or ``undetermined``.

    Converged: final error at most ``1e-6 * max(1, e0)``.  Diverged: the run
    blew up, went nonfinite, or kept at least a tenth of ``max(1, e0)``.
    """
    if run.termination in ("blowup", "nonfinite"):
        return "diverged"
    scale = max(1.0, float(run.error_norm[0]))
    final = float(run.error_norm[-1])
    if final <= CONVERGED_FRACTION * scale:
        return "converged"
    if final >= DIVERGED_FRACTION * scale:
        return "diverged"
    return "undetermined"


def with_integrator(config: FilterConfig, **changes) -> FilterConfig:
    return replace(config, integrator=replace(config.integrator, **changes))
