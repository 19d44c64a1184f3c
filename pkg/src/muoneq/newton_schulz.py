"""Finite-step Newton-Schulz polar iteration with an odd quintic polynomial.

Each step maps ``X -> (a I + b X X^T + c (X X^T)^2) X``, i.e. every singular
value ``s`` goes to ``phi(s) = a s + b s^3 + c s^5`` while the singular vectors
stay fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from muoneq.exceptions import NumericalError
from muoneq.linalg import as_matrix, polar_factor

PRESCALES = ("frobenius", "max1_frobenius")


@dataclass(frozen=True)
class NsPolynomial:
    a: float
    b: float
    c: float

    def phi(self, s):
        return self.a * s + self.b * s**3 + self.c * s**5

    def q(self, t):
        return self.a + self.b * t + self.c * t**2

    def validate(self) -> "NsPolynomial":
        validate_polynomial(self.a, self.b, self.c)
        return self


TAYLOR = NsPolynomial(15 / 8, -5 / 4, 3 / 8)
# Widely used Muon coefficients; an external convention, not used by any theory check.
PRACTICAL = NsPolynomial(3.4445, -4.7750, 2.0315)
PRESETS = {"taylor": TAYLOR, "practical": PRACTICAL}


def get_polynomial(name_or_poly) -> NsPolynomial:
    if isinstance(name_or_poly, NsPolynomial):
        return name_or_poly
    try:
        return PRESETS[str(name_or_poly).lower()]
    except KeyError:
        raise ValueError(
            f"unknown coefficient preset {name_or_poly!r}; expected one of {sorted(PRESETS)}"
        ) from None


def validate_polynomial(a: float, b: float, c: float) -> None:
    """Raise ``ValueError`` unless ``a > 1`` and ``0 < q(t) <= a`` on ``[0, 1]``.

    ``q(t) = a + b t + c t^2`` is quadratic, so its extremes on ``[0, 1]`` sit at
    the endpoints or at the vertex ``-b / (2c)`` when that lies inside.
    """
    for name, v in (("a", a), ("b", b), ("c", c)):
        if not math.isfinite(v):
            raise ValueError(f"coefficient {name} = {v!r} is not finite")
    if not a > 1:
        raise ValueError(f"condition a > 1 fails: a = {a!r}")
    candidates = [0.0, 1.0]
    if c != 0.0:
        vertex = -b / (2.0 * c)
        if 0.0 < vertex < 1.0:
            candidates.append(vertex)
    for t in candidates:
        qt = a + b * t + c * t * t
        if not qt > 0:
            raise ValueError(f"condition q(t) > 0 fails at t = {t!r}: q = {qt!r}")
        if qt > a:
            raise ValueError(f"condition q(t) <= a fails at t = {t!r}: q = {qt!r} > a = {a!r}")


@dataclass(frozen=True)
class NsConfig:
    polynomial: NsPolynomial = TAYLOR
    steps: int = 5
    prescale: str = "frobenius"

    def __post_init__(self):
        object.__setattr__(self, "polynomial", get_polynomial(self.polynomial))
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a nonnegative integer, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))
        if self.prescale not in PRESCALES:
            raise ValueError(f"prescale must be one of {PRESCALES}, got {self.prescale!r}")
        self.polynomial.validate()


NS5_CONFIG = NsConfig(TAYLOR, 5, "max1_frobenius")


@dataclass
class NsTrajectory:
    iterates: list[np.ndarray] | None = None
    per_step_error: list[float] | None = None
    scale: float = 1.0
    transposed: bool = False


def prescale_factor(G: np.ndarray, prescale: str) -> float:
    fro = float(np.linalg.norm(G))
    if prescale == "frobenius":
        return fro
    return max(1.0, fro)


def ns_run(G, cfg: NsConfig | None = None, record: bool = False):
    """Run ``cfg.steps`` Newton-Schulz steps on ``G``.

    Returns ``(output, trajectory)``. The iteration runs on the side with fewer
    rows (tall inputs are transposed and transposed back). Iterates and errors
    against the exact polar factor are kept only when ``record`` is set.
    """
    cfg = cfg or NsConfig()
    G = as_matrix(G, "G")
    transposed = G.shape[0] > G.shape[1]
    traj = NsTrajectory(transposed=transposed)
    if not np.any(G):
        out = np.zeros_like(G)
        if record:
            traj.iterates = [out.copy() for _ in range(cfg.steps + 1)]
            traj.per_step_error = [0.0] * (cfg.steps + 1)
        return out, traj

    alpha = prescale_factor(G, cfg.prescale)
    traj.scale = alpha
    X = (G.T if transposed else G) / alpha
    p = cfg.polynomial
    orth = None
    if record:
        orth = polar_factor(G)
        traj.iterates = []
        traj.per_step_error = []

    def keep(X):
        Xo = X.T if transposed else X
        traj.iterates.append(Xo.copy())
        traj.per_step_error.append(float(np.linalg.norm(Xo - orth)))

    if record:
        keep(X)
    for k in range(cfg.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            A = X @ X.T
            B = p.b * A + p.c * (A @ A)
            X = p.a * X + B @ X
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"Newton-Schulz produced non-finite values at step {k + 1}")
        if record:
            keep(X)
    out = X.T if transposed else X
    return np.ascontiguousarray(out), traj


def ns5(A) -> np.ndarray:
    """Five Taylor steps after scaling by ``max(1, ||A||_F)``."""
    return ns_run(A, NS5_CONFIG)[0]


def scalar_recursion(s0, poly: NsPolynomial, steps: int):
    """Apply ``phi`` to scalar(s) ``steps`` times; the diagonal-input reference."""
    s = np.asarray(s0, dtype=np.float64)
    for _ in range(steps):
        s = poly.phi(s)
    return s


class NewtonSchulzOrthogonalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer approximating the polar factor of a matrix."""

    def __init__(self, coeffs="taylor", steps=5, prescale="max1_frobenius"):
        self.coeffs = coeffs
        self.steps = steps
        self.prescale = prescale

    def _config(self) -> NsConfig:
        return NsConfig(get_polynomial(self.coeffs), self.steps, self.prescale)

    def fit(self, X, y=None):
        self._config()
        self.n_features_in_ = as_matrix(X, "X").shape[1]
        return self

    def transform(self, X):
        return ns_run(X, self._config())[0]
