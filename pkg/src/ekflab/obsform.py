"""Controlled nonlinear systems and the uniformly observable canonical form.

A system in observable form with output blocks of lengths ``l_1 <= ... <= l_p``
reads ``xdot = Abar x + fbar(x, u)``, ``y = Cbar x + hbar(u)`` where ``Abar`` is
block-diagonal with shift blocks and ``Cbar`` picks the first coordinate of
each block.  Coordinates are ordered block by block, so ``x_{ij}`` (block
``i``, position ``j``, both 1-based) sits at flat index ``offset_i + j - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

Vector = np.ndarray
Matrix = np.ndarray

DEFAULT_BOX = 5.0
DEFAULT_SAMPLES = 200


class StructureError(ValueError):
    """Raised when block lengths or a declared canonical structure are invalid."""


def finite_difference_jacobian(fun: Callable, x: Vector, u: Vector, rel_step: float = 1e-6) -> Matrix:
    """Central-difference Jacobian of ``fun(x, u)`` with respect to ``x``.

    The step for coordinate ``i`` is ``rel_step * max(1, |x_i|)``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    f0 = np.asarray(fun(x, u), dtype=float)
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(fun(xp, u)) - np.asarray(fun(xm, u))) / (xp[i] - xm[i])
    return jac


def check_block_lengths(block_lengths: Sequence[int]) -> tuple[int, ...]:
    lengths = tuple(int(l) for l in block_lengths)
    if not lengths:
        raise StructureError("block_lengths must be nonempty")
    if any(l < 1 for l in lengths):
        raise StructureError(f"block lengths must be positive, got {lengths}")
    return lengths


def block_offsets(block_lengths: Sequence[int]) -> list[int]:
    lengths = check_block_lengths(block_lengths)
    return [int(v) for v in np.cumsum((0,) + lengths[:-1])]


def coordinate_index(block_lengths: Sequence[int]) -> list[tuple[int, int]]:
    """1-based ``(i, j)`` label of every flat state coordinate."""
    lengths = check_block_lengths(block_lengths)
    return [(i + 1, j + 1) for i, l in enumerate(lengths) for j in range(l)]


def build_block_matrices(block_lengths: Sequence[int]) -> tuple[Matrix, Matrix]:
    """Return ``(Abar, Cbar)`` for the given output block lengths."""
    lengths = check_block_lengths(block_lengths)
    n, p = sum(lengths), len(lengths)
    abar = np.zeros((n, n))
    cbar = np.zeros((p, n))
    for i, (off, l) in enumerate(zip(block_offsets(lengths), lengths)):
        for j in range(l - 1):
            abar[off + j, off + j + 1] = 1.0
        cbar[i, off] = 1.0
    return abar, cbar


@dataclass(frozen=True)
class CanonicalStructure:
    block_lengths: tuple[int, ...]
    lipschitz_L: float
    second_derivative_L: float
    fbar: Callable
    hbar: Callable

    def __post_init__(self):
        lengths = check_block_lengths(self.block_lengths)
        if any(a > b for a, b in zip(lengths, lengths[1:])):
            raise StructureError(f"block lengths must be nondecreasing, got {lengths}")
        if self.lipschitz_L <= 0 or self.second_derivative_L <= 0:
            raise StructureError("declared Lipschitz constants must be positive")
        object.__setattr__(self, "block_lengths", lengths)

    @property
    def state_dim(self) -> int:
        return sum(self.block_lengths)

    @property
    def L(self) -> float:
        """Single constant covering both the Lipschitz and curvature bounds."""
        return max(self.lipschitz_L, self.second_derivative_L)

    def matrices(self) -> tuple[Matrix, Matrix]:
        return build_block_matrices(self.block_lengths)


@dataclass(frozen=True)
class System:
    """A system ``xdot = drift(x, u)``, ``y = output(x, u)``.

    Jacobians default to central finite differences.  All callables take and
    return float64 numpy arrays; ``u`` is a length ``input_dim`` vector (possibly
    empty).
    """

    state_dim: int
    input_dim: int
    output_dim: int
    drift: Callable
    output: Callable
    drift_jacobian: Callable | None = None
    output_jacobian: Callable | None = None
    canonical: CanonicalStructure | None = None
    name: str = ""
    # set when every callable is a typed numba function usable by the compiled kernel
    compiled: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.output_dim < 1 or self.input_dim < 0:
            raise StructureError("invalid system dimensions")
        if self.drift_jacobian is None:
            drift = self.drift
            object.__setattr__(self, "drift_jacobian", lambda x, u: finite_difference_jacobian(drift, x, u))
        if self.output_jacobian is None:
            output = self.output
            object.__setattr__(self, "output_jacobian", lambda x, u: finite_difference_jacobian(output, x, u))
        if self.canonical is not None:
            if self.canonical.state_dim != self.state_dim:
                raise StructureError("canonical block lengths do not sum to state_dim")
            if len(self.canonical.block_lengths) != self.output_dim:
                raise StructureError("number of canonical blocks must equal output_dim")

    def zero_input(self) -> Vector:
        return np.zeros(self.input_dim)


def make_canonical_system(
    block_lengths: Sequence[int],
    fbar: Callable,
    hbar: Callable,
    lipschitz_L: float,
    second_derivative_L: float,
    *,
    fbar_jacobian: Callable | None = None,
    input_dim: int = 0,
    name: str = "",
) -> System:
    """Assemble ``xdot = Abar x + fbar(x, u)``, ``y = Cbar x + hbar(u)``."""
    structure = CanonicalStructure(tuple(block_lengths), lipschitz_L, second_derivative_L, fbar, hbar)
    abar, cbar = structure.matrices()
    n, p = cbar.shape[1], cbar.shape[0]

    def drift(x, u):
        return abar @ x + np.asarray(fbar(x, u), dtype=float)

    def output(x, u):
        return cbar @ x + np.asarray(hbar(u), dtype=float)

    if fbar_jacobian is not None:
        def drift_jacobian(x, u):
            return abar + np.asarray(fbar_jacobian(x, u), dtype=float)
    else:
        def drift_jacobian(x, u):
            return abar + finite_difference_jacobian(fbar, x, u)

    def output_jacobian(x, u):
        return cbar.copy()

    return System(n, input_dim, p, drift, output, drift_jacobian, output_jacobian, structure, name)


@dataclass
class ValidationReport:
    passed: bool
    forbidden_partial_max: float
    lipschitz_quotient: float
    second_derivative_bound: float
    declared_lipschitz_L: float
    declared_second_derivative_L: float
    n_samples: int
    box: tuple[float, float] | None = None
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "forbidden_partial_max": self.forbidden_partial_max,
            "lipschitz_quotient": self.lipschitz_quotient,
            "second_derivative_bound": self.second_derivative_bound,
            "declared_lipschitz_L": self.declared_lipschitz_L,
            "declared_second_derivative_L": self.declared_second_derivative_L,
            "n_samples": self.n_samples,
            "box": list(self.box) if self.box is not None else None,
            "violations": self.violations,
        }


def box_samples(system: System, n_samples: int = DEFAULT_SAMPLES, half_width: float = DEFAULT_BOX) -> list[tuple[Vector, Vector]]:
    """Deterministic Halton points in ``[-half_width, half_width]^n`` with zero input."""
    n = system.state_dim
    if n == 1:
        unit = qmc.Halton(d=2, scramble=False).random(n_samples + 1)[1:, :1]
    else:
        unit = qmc.Halton(d=n, scramble=False).random(n_samples + 1)[1:]
    pts = qmc.scale(unit, -half_width, half_width)
    u = system.zero_input()
    return [(np.ascontiguousarray(p), u) for p in pts]


def _dependency_masks(block_lengths: tuple[int, ...]) -> list[np.ndarray]:
    """Mask of the coordinates ``x_j`` (underlined) for positions ``j = 1..l_p``."""
    labels = coordinate_index(block_lengths)
    return [np.array([k <= j for (_, k) in labels]) for j in range(1, max(block_lengths) + 1)]


def validate_structure(
    system: System,
    sample_points: Sequence[tuple[Vector, Vector]] | None = None,
    tol: float = 1e-6,
    *,
    n_directions: int = 8,
    box: tuple[float, float] | None = None,
) -> ValidationReport:
    """Empirically check the triangular structure and declared constants of ``system``.

    Computes the largest forbidden partial derivative of ``fbar`` (component
    ``(i, r)`` against coordinate ``(j, k)`` with ``k > r``), the largest
    Lipschitz quotient of each ``fbar_{ij}`` over pairs of samples sharing an
    input, and the largest second directional derivative of ``fbar`` over
    unit directions.  The two empirical constants pass when within ``tol`` of
    the declared ones.
    """
    structure = system.canonical
    if structure is None:
        raise StructureError("system is not declared in observable form")
    if sample_points is None:
        sample_points = box_samples(system)
        box = (-DEFAULT_BOX, DEFAULT_BOX)
    if len(sample_points) == 0:
        raise ValueError("sample_points must be nonempty")

    lengths = structure.block_lengths
    labels = coordinate_index(lengths)
    fbar = structure.fbar
    n = structure.state_dim
    pts = [(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(u, dtype=float)) for x, u in sample_points]

    violations = []
    forbidden_max = 0.0
    for x, u in pts:
        jac = finite_difference_jacobian(fbar, x, u)
        for row, (i, r) in enumerate(labels):
            for col, (j, k) in enumerate(labels):
                if k <= r:
                    continue
                val = abs(jac[row, col])
                forbidden_max = max(forbidden_max, val)
                if val > tol:
                    violations.append({"kind": "forbidden_partial", "i": i, "r": r, "j": j, "k": k,
                                       "value": float(val), "x": x.tolist(), "u": u.tolist()})

    masks = _dependency_masks(lengths)
    values = np.array([np.asarray(fbar(x, u), dtype=float) for x, u in pts])
    xs = np.array([x for x, _ in pts])
    groups: dict[bytes, list[int]] = {}
    for idx, (_, u) in enumerate(pts):
        groups.setdefault(u.tobytes(), []).append(idx)
    lip = 0.0
    for members in groups.values():
        if len(members) < 2:
            continue
        ix = np.array(members)
        for row, (_, j) in enumerate(labels):
            sub = xs[ix][:, masks[j - 1]]
            dist = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=-1)
            diff = np.abs(values[ix, row][:, None] - values[ix, row][None, :])
            ok = dist > 1e-12
            if ok.any():
                lip = max(lip, float(np.max(diff[ok] / dist[ok])))

    rng = np.random.default_rng(0)
    directions = [np.eye(n)[i] for i in range(n)]
    for _ in range(n_directions):
        d = rng.standard_normal(n)
        directions.append(d / np.linalg.norm(d))
    eps = 1e-4
    second = 0.0
    for x, u in pts:
        f0 = np.asarray(fbar(x, u), dtype=float)
        for d in directions:
            fp = np.asarray(fbar(np.ascontiguousarray(x + eps * d), u), dtype=float)
            fm = np.asarray(fbar(np.ascontiguousarray(x - eps * d), u), dtype=float)
            second = max(second, float(np.linalg.norm((fp - 2.0 * f0 + fm) / eps**2)))

    if lip > structure.lipschitz_L + tol:
        violations.append({"kind": "lipschitz", "value": lip, "declared": structure.lipschitz_L})
    if second > structure.second_derivative_L + tol:
        violations.append({"kind": "second_derivative", "value": second, "declared": structure.second_derivative_L})

    passed = (forbidden_max <= tol and lip <= structure.lipschitz_L + tol
              and second <= structure.second_derivative_L + tol)
    return ValidationReport(passed, forbidden_max, lip, second, structure.lipschitz_L,
                            structure.second_derivative_L, len(pts), box, violations)
