"""High-gain Gramian ``S(theta)`` and its inverse ``T(theta)``.

``S(theta)`` solves ``Abar' S + S Abar - Cbar' Cbar = -theta S``.  Within a
block, with 1-based positions ``j, sigma``::

    S_{j sigma}(theta) = (-1)^(j+sigma) * binom(j+sigma-2, j-1) / theta^(j+sigma-1)

and blocks do not couple.  ``S(1)`` is a signed symmetric Pascal matrix, so
its inverse is an integer matrix; ``T(theta)`` scales it entrywise by
``theta^(j+sigma-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .obsform import block_offsets, build_block_matrices, check_block_lengths

MAX_BLOCK = 12


def _validate(block_lengths: Sequence[int], theta: float) -> tuple[int, ...]:
    lengths = check_block_lengths(block_lengths)
    if max(lengths) > MAX_BLOCK:
        raise ValueError(f"blocks longer than {MAX_BLOCK} are not supported")
    if not theta > 0 or not np.isfinite(theta):
        raise ValueError(f"theta must be positive, got {theta}")
    return lengths


def _s_block_int(l: int) -> list[list[int]]:
    return [[(-1) ** (j + s) * comb(j + s - 2, j - 1) for s in range(1, l + 1)] for j in range(1, l + 1)]


def _t_block_int(l: int) -> list[list[int]]:
    # S(1) = D L L' D with L the lower Pascal matrix and D = diag((-1)^j),
    # and L^{-1} has entries (-1)^(a-b) binom(a, b); the signs cancel against D.
    linv = [[(-1) ** (a - b) * comb(a, b) if b <= a else 0 for b in range(l)] for a in range(l)]
    out = []
    for j in range(l):
        row = []
        for s in range(l):
            acc = sum(linv[k][j] * linv[k][s] for k in range(l))
            row.append((-1) ** (j + s) * acc)
        out.append(row)
    return out


def exponent_matrix(block_lengths: Sequence[int]) -> np.ndarray:
    """Entrywise ``j + sigma - 1`` within blocks, zero across blocks."""
    lengths = check_block_lengths(block_lengths)
    n = sum(lengths)
    e = np.zeros((n, n), dtype=int)
    for off, l in zip(block_offsets(lengths), lengths):
        j = np.arange(1, l + 1)
        e[off:off + l, off:off + l] = j[:, None] + j[None, :] - 1
    return e


def _assemble(block_lengths: tuple[int, ...], block_fn) -> np.ndarray:
    n = sum(block_lengths)
    out = np.zeros((n, n), dtype=object)
    out[:] = 0
    for off, l in zip(block_offsets(block_lengths), block_lengths):
        blk = block_fn(l)
        for a in range(l):
            for b in range(l):
                out[off + a, off + b] = blk[a][b]
    return out


def s_matrix_unit(block_lengths: Sequence[int]) -> np.ndarray:
    """``S(1)`` as an exact integer (object dtype) array."""
    lengths = _validate(block_lengths, 1.0)
    return _assemble(lengths, _s_block_int)


def t_matrix_unit(block_lengths: Sequence[int]) -> np.ndarray:
    """``T(1) = S(1)^{-1}`` as an exact integer (object dtype) array."""
    lengths = _validate(block_lengths, 1.0)
    return _assemble(lengths, _t_block_int)


def s_matrix(block_lengths: Sequence[int], theta: float) -> np.ndarray:
    lengths = _validate(block_lengths, theta)
    unit = s_matrix_unit(lengths).astype(float)
    expo = exponent_matrix(lengths)
    mask = expo > 0
    out = np.zeros_like(unit)
    out[mask] = unit[mask] / float(theta) ** expo[mask]
    return out


def t_matrix(block_lengths: Sequence[int], theta: float) -> np.ndarray:
    lengths = _validate(block_lengths, theta)
    unit = t_matrix_unit(lengths).astype(float)
    expo = exponent_matrix(lengths)
    mask = expo > 0
    out = np.zeros_like(unit)
    out[mask] = unit[mask] * float(theta) ** expo[mask]
    return out


def _check_square(M: np.ndarray, n: int):
    if M.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got shape {M.shape}")


def lyapunov_residual(S, theta: float, block_lengths: Sequence[int]) -> float:
    """Frobenius norm of ``Abar' S + S Abar - Cbar' Cbar + theta S``."""
    abar, cbar = build_block_matrices(block_lengths)
    S = np.asarray(S, dtype=float)
    _check_square(S, abar.shape[0])
    r = abar.T @ S + S @ abar - cbar.T @ cbar + theta * S
    return float(np.linalg.norm(r, "fro"))


def riccati_residual(T, theta: float, block_lengths: Sequence[int]) -> float:
    """Frobenius norm of ``-Abar T - T Abar' + T Cbar' Cbar T - theta T``."""
    abar, cbar = build_block_matrices(block_lengths)
    T = np.asarray(T, dtype=float)
    _check_square(T, abar.shape[0])
    r = -abar @ T - T @ abar.T + T @ cbar.T @ cbar @ T - theta * T
    return float(np.linalg.norm(r, "fro"))


@dataclass(frozen=True)
class GramianPair:
    theta: float
    block_lengths: tuple[int, ...]
    S: np.ndarray
    T: np.ndarray

    @classmethod
    def build(cls, block_lengths: Sequence[int], theta: float) -> "GramianPair":
        lengths = _validate(block_lengths, theta)
        return cls(float(theta), lengths, s_matrix(lengths, theta), t_matrix(lengths, theta))

    def residuals(self) -> dict[str, float]:
        return {
            "lyapunov": lyapunov_residual(self.S, self.theta, self.block_lengths),
            "riccati": riccati_residual(self.T, self.theta, self.block_lengths),
            "inverse": float(np.linalg.norm(self.S @ self.T - np.eye(len(self.S)), "fro")),
        }

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "block_lengths": list(self.block_lengths),
            "S": self.S.tolist(),
            "T": self.T.tolist(),
            "residuals": self.residuals(),
        }
