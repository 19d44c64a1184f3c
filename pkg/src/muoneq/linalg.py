"""Dense real matrix kernel: SVD, polar factor, norms.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here is the exact
reference the iterative routines elsewhere are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from muoneq.exceptions import NumericalError

EPS64 = 2.0**-52


def as_matrix(A, name: str = "A") -> np.ndarray:
    """Validate ``A`` as a finite, non-empty 2-D float64 matrix."""
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class SvdResult:
    left_vectors: np.ndarray  # m x r, orthonormal columns
    singular_values: np.ndarray  # r, descending, strictly positive
    right_vectors: np.ndarray  # n x r, orthonormal columns

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])


def rank_threshold(shape: tuple[int, int], sigma_max: float) -> float:
    return max(shape) * sigma_max * EPS64


def svd(A) -> SvdResult:
    """Compact SVD with numerical rank cut at ``max(m, n) * sigma_1 * 2**-52``.

    A zero matrix yields ``r = 0`` and empty factors.
    """
    A = as_matrix(A)
    m, n = A.shape
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for {m}x{n} input") from exc
    if s.size == 0 or s[0] == 0.0:
        return SvdResult(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))
    keep = s > rank_threshold(A.shape, s[0])
    r = int(np.count_nonzero(keep))
    return SvdResult(U[:, :r].copy(), s[:r].copy(), Vt[:r, :].T.copy())


def polar_factor(A) -> np.ndarray:
    """Exact polar factor ``U V^T``; the zero matrix maps to zero."""
    A = as_matrix(A)
    res = svd(A)
    if res.rank == 0:
        return np.zeros_like(A)
    return res.left_vectors @ res.right_vectors.T


def norms(A) -> dict[str, float]:
    A = as_matrix(A)
    s = svd(A).singular_values
    return {
        "frobenius": frobenius_norm(A),
        "spectral": float(s[0]) if s.size else 0.0,
        "nuclear": float(np.sum(s)),
        "max_abs": float(np.max(np.abs(A))),
    }


def frobenius_norm(A) -> float:
    """Frobenius norm computed on ``A / max|A|`` so tiny or huge entries do not under/overflow."""
    A = np.asarray(A, dtype=np.float64)
    big = float(np.max(np.abs(A))) if A.size else 0.0
    if big == 0.0:
        return 0.0
    B = A / big
    return big * float(np.sqrt(np.sum(B * B)))


def spectral_norm(A) -> float:
    s = svd(A).singular_values
    return float(s[0]) if s.size else 0.0


def row_col_sq_norms(A) -> tuple[np.ndarray, np.ndarray]:
    """Row and column sums of ``A * A``."""
    A = as_matrix(A)
    sq = A * A
    return sq.sum(axis=1), sq.sum(axis=0)
