"""Convergence certificates for completed filter runs.

The Lyapunov function is ``V = e' Q e`` with ``e = x - xhat`` and ``Q = P^{-1}``.
With ``P <= m1 I``, ``Q <= m5 I`` and ``Gamma >= m7 I`` exponential decay of
``V`` is guaranteed once ``sqrt(V) < m7 / (2 m1^3.5 m5^2 L)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import null_space

from .filter import FilterRun, classify

V_FLOOR = 1e-300


@dataclass
class DiagnosticsReport:
    m1_hat: float
    m5_hat: float
    m7: float
    L: float
    radius: float
    sqrt_V0: float
    entry_time: float | None
    decay_rate: float | None
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        def fmt(v):
            return "absent" if v is None else f"{v:.6g}"
        lines = [
            f"verdict      {self.verdict}",
            f"m1_hat       {fmt(self.m1_hat)}   (sup lambda_max P)",
            f"m5_hat       {fmt(self.m5_hat)}   (sup lambda_max Q)",
            f"m7           {fmt(self.m7)}   (lambda_min Gamma)",
            f"L            {fmt(self.L)}",
            f"radius       {fmt(self.radius)}",
            f"sqrt(V(0))   {fmt(self.sqrt_V0)}",
            f"entry_time   {fmt(self.entry_time)}",
            f"decay_rate   {fmt(self.decay_rate)}",
        ]
        return "\n".join(lines)


def covariance_bounds(run: FilterRun) -> tuple[float, float]:
    """Suprema over stored samples of ``lambda_max(P)`` and ``lambda_max(Q)``."""
    if len(run) == 0:
        raise ValueError("empty run")
    m1 = float(np.max(np.linalg.eigvalsh(run.covariances())[:, -1]))
    m5 = float(np.max(np.linalg.eigvalsh(run.informations())[:, -1]))
    return m1, m5


def convergence_radius(m1: float, m5: float, m7: float, L: float) -> float:
    if min(m1, m5, m7, L) <= 0:
        raise ValueError("convergence_radius arguments must be positive")
    return m7 / (2.0 * m1 ** 3.5 * m5 ** 2 * L)


def lyapunov_decay(run: FilterRun, radius: float, floor: float = V_FLOOR) -> tuple[float | None, float | None]:
    """First time ``sqrt(V) < radius`` and the log-linear slope of ``V`` afterwards."""
    V = np.asarray(run.V, dtype=float)
    inside = np.flatnonzero(np.sqrt(np.maximum(V, 0.0)) < radius)
    if inside.size == 0:
        return None, None
    k0 = int(inside[0])
    entry = float(run.times[k0])
    t, v = run.times[k0:], V[k0:]
    keep = v >= floor
    if keep.sum() < 2:
        return entry, None
    slope = np.polyfit(t[keep], np.log(v[keep]), 1)[0]
    return entry, float(slope)


def diagnose(run: FilterRun, L: float, m7: float | None = None) -> DiagnosticsReport:
    if m7 is None:
        m7 = float(run.meta["m7"])
    m1, m5 = covariance_bounds(run)
    radius = convergence_radius(m1, m5, m7, L)
    entry, rate = lyapunov_decay(run, radius)
    return DiagnosticsReport(m1, m5, float(m7), float(L), radius, float(np.sqrt(max(run.V[0], 0.0))),
                             entry, rate, classify(run))


def post_entry_monotone(run: FilterRun, entry_time: float, rel_slack: float = 1e-9,
                        abs_floor: float = 0.0) -> bool:
    """``V[k+1] <= V[k] (1 + rel_slack) + abs_floor`` for every sample after entry."""
    k0 = int(np.searchsorted(run.times, entry_time))
    v = run.V[k0:]
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + rel_slack) + abs_floor))


def roundoff_floor(run: FilterRun, ulps: float = 1e3) -> float:
    """Size of ``V`` produced by an error of ``ulps`` units in the last place of the state.

    Below this level successive ``V`` samples are rounding noise and carry no
    ordering information.
    """
    scale = max(float(np.max(np.abs(run.x))), 1.0)
    m5 = float(np.max(np.linalg.eigvalsh(run.informations())[:, -1]))
    return m5 * (ulps * np.finfo(float).eps * scale) ** 2


@dataclass
class Obstruction:
    witness: np.ndarray
    value: float


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def kernel_obstruction(A, C) -> Obstruction | None:
    """Detectability obstruction on ``ker C``; ``None`` means inconclusive.

    For ``xi`` in ``ker C`` the injection term vanishes, ``xi'(A + Lambda C)xi
    = xi' A xi``, so a nonnegative maximum of ``xi' A xi`` over unit ``xi`` in
    the kernel rules out every output injection ``Lambda``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if not np.any(C):
        raise ValueError("C must be nonzero")
    N = null_space(C)
    if N.shape[1] == 0:
        return None
    w, V = np.linalg.eigh(N.T @ _sym(A) @ N)
    if w[-1] < 0:
        return None
    xi = N @ V[:, -1]
    xi /= np.linalg.norm(xi)
    if xi[np.flatnonzero(np.abs(xi) > 1e-12)[0]] < 0:
        xi = -xi
    return Obstruction(xi, float(w[-1]))


def detectability_certificate(A, C, Lambda, alpha: float) -> bool:
    """True iff ``lambda_max(sym(A + Lambda C)) <= -alpha`` (constant matrices)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Lambda = np.asarray(Lambda, dtype=float).reshape(A.shape[0], C.shape[0])
    if A.shape[0] != A.shape[1] or C.shape[1] != A.shape[0]:
        raise ValueError("inconsistent dimensions")
    return bool(np.linalg.eigvalsh(_sym(A + Lambda @ C))[-1] <= -alpha)
