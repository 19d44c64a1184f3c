"""Diagonal row/column equilibration applied before orthogonalization.

``diag_pre`` computes ``D_r = diag(rowsum(M*M) + eps)`` and/or
``D_c = diag(colsum(M*M) + eps)`` from the matrix itself and returns
``D_r^{-1/2} M D_c^{-1/2}`` (mode RC), ``D_r^{-1/2} M`` (R) or ``M D_c^{-1/2}`` (C).
With ``eps = 0`` the inverse square root is a pseudoinverse, so zero rows and
columns pass through unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from muoneq.linalg import as_matrix, row_col_sq_norms

DEFAULT_EPS = 1e-8


class EquilMode(enum.Enum):
    RC = "RC"
    R = "R"
    C = "C"
    NONE = "None"

    @classmethod
    def parse(cls, value) -> "EquilMode":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        key = str(value).strip().lower()
        for mode in cls:
            if mode.value.lower() == key:
                return mode
        raise ValueError(f"unknown equilibration mode {value!r}; expected RC, R, C or None")

    @property
    def uses_rows(self) -> bool:
        return self in (EquilMode.RC, EquilMode.R)

    @property
    def uses_cols(self) -> bool:
        return self in (EquilMode.RC, EquilMode.C)


# Canonical report ordering for sweeps.
MODE_ORDER = (EquilMode.RC, EquilMode.R, EquilMode.C, EquilMode.NONE)


@dataclass(frozen=True)
class EquilConfig:
    mode: EquilMode = EquilMode.R
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        object.__setattr__(self, "mode", EquilMode.parse(self.mode))
        if not (self.epsilon >= 0.0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class EquilOutput:
    result: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray


def inv_sqrt_scale(sums: np.ndarray, epsilon: float) -> np.ndarray:
    d = sums + epsilon
    out = np.zeros_like(d)
    pos = d > 0.0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def diag_pre(M, cfg: EquilConfig | None = None) -> EquilOutput:
    cfg = cfg or EquilConfig()
    M = as_matrix(M, "M")
    m, n = M.shape
    row_scale = np.ones(m)
    col_scale = np.ones(n)
    if cfg.mode is EquilMode.NONE:
        return EquilOutput(M.copy(), row_scale, col_scale)
    rows, cols = row_col_sq_norms(M)
    if cfg.mode.uses_rows:
        row_scale = inv_sqrt_scale(rows, cfg.epsilon)
    if cfg.mode.uses_cols:
        col_scale = inv_sqrt_scale(cols, cfg.epsilon)
    result = row_scale[:, None] * M * col_scale[None, :]
    return EquilOutput(result, row_scale, col_scale)


def scaler_bounds_report(M, g_inf: float, epsilon: float) -> dict:
    """Check the entrywise bounds on the row and column scalers.

    Every row scale must lie in ``[(n g_inf^2 + eps)^{-1/2}, eps^{-1/2}]`` and
    every column scale in ``[(m g_inf^2 + eps)^{-1/2}, eps^{-1/2}]`` whenever
    ``max|M_ij| <= g_inf``.
    """
    M = as_matrix(M, "M")
    if not g_inf > 0:
        raise ValueError("g_inf must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    over = np.argwhere(np.abs(M) > g_inf)
    if over.size:
        i, j = (int(v) for v in over[0])
        raise ValueError(f"|M[{i},{j}]| = {abs(M[i, j])!r} exceeds g_inf = {g_inf!r}")
    m, n = M.shape
    rows, cols = row_col_sq_norms(M)
    p = inv_sqrt_scale(rows, epsilon)
    q = inv_sqrt_scale(cols, epsilon)
    upper = epsilon**-0.5
    row_lo = (n * g_inf**2 + epsilon) ** -0.5
    col_lo = (m * g_inf**2 + epsilon) ** -0.5
    ok = bool(
        np.all(p >= row_lo) and np.all(p <= upper) and np.all(q >= col_lo) and np.all(q <= upper)
    )
    scales = np.concatenate([p, q])
    return {
        "ok": ok,
        "min_scale": float(scales.min()),
        "max_scale": float(scales.max()),
        "row_scale": p,
        "col_scale": q,
        "row_bounds": (row_lo, upper),
        "col_bounds": (col_lo, upper),
    }


class RowColumnEqualizer(TransformerMixin, BaseEstimator):
    """Learn row/column equilibration scales from one matrix and apply them.

    ``fit(M)`` stores ``row_scale_`` and ``col_scale_``; ``transform(X)``
    returns ``diag(row_scale_) X diag(col_scale_)`` for any ``X`` of the same
    shape. ``fit_transform(M)`` is exactly ``diag_pre(M).result``.
    """

    def __init__(self, mode="R", epsilon=DEFAULT_EPS):
        self.mode = mode
        self.epsilon = epsilon

    def fit(self, X, y=None):
        out = diag_pre(X, EquilConfig(self.mode, self.epsilon))
        self.row_scale_ = out.row_scale
        self.col_scale_ = out.col_scale
        self.n_features_in_ = out.result.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["row_scale_", "col_scale_"])
        X = as_matrix(X, "X")
        if X.shape != (self.row_scale_.size, self.col_scale_.size):
            raise ValueError(
                f"X has shape {X.shape}, expected {(self.row_scale_.size, self.col_scale_.size)}"
            )
        return self.row_scale_[:, None] * X * self.col_scale_[None, :]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform(X)
