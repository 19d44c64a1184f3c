"""Executable checks for the spectral and convergence quantities behind MuonEq.

Covers spectral diagnostics, the Newton-Schulz lower bound, the
approximation/bias error split, first-order whitening expansions, convergence
constants for the RC and R variants, NS5 inexactness and the row-normalized
alignment inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from muoneq.equilibrate import EquilConfig, EquilMode, diag_pre
from muoneq.exceptions import DomainError
from muoneq.linalg import as_matrix, polar_factor, spectral_norm, svd
from muoneq.newton_schulz import NS5_CONFIG, TAYLOR, NsConfig, ns_run, prescale_factor
from muoneq.rng import Rng


@dataclass(frozen=True)
class SpectralReport:
    singular_values: np.ndarray
    stable_rank: float
    condition_number: float
    kappa_i: np.ndarray
    energy: np.ndarray
    entropy: float

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)


def spectral_report(A) -> SpectralReport:
    s = svd(A).singular_values
    if s.size == 0:
        raise DomainError("spectral report is undefined for the zero matrix")
    fro2 = float(np.sum(s * s))
    p = s * s / fro2
    nz = p[p > 0]
    return SpectralReport(
        singular_values=s,
        stable_rank=fro2 / float(s[0]) ** 2,
        condition_number=float(s[0] / s[-1]),
        kappa_i=s[0] / s,
        energy=p,
        entropy=float(-np.sum(nz * np.log(nz))),
    )


def condition_number(A) -> float:
    return spectral_report(A).condition_number


@dataclass(frozen=True)
class Thm1Bound:
    bound_per_k: np.ndarray
    tau_i: np.ndarray
    tau_spread: float
    rank: int
    stable_rank: float
    condition_number: float


def thm1_bound(G, a: float, k_max: int) -> Thm1Bound:
    """Lower bound on ``||X_k - Orth(G)||_F / sqrt(r)`` for Frobenius-prescaled NS.

    ``bound[k] = sqrt(sum_i (1 - a^k / (kappa_i sqrt(sr)))_+^2) / sqrt(r)`` and the
    transition times are ``tau_i = log_a(kappa_i sqrt(sr))``.
    """
    if not a > 1:
        raise ValueError(f"a must exceed 1, got {a}")
    rep = spectral_report(G)
    r = rep.rank
    x = rep.kappa_i * math.sqrt(rep.stable_rank)
    ks = np.arange(int(k_max) + 1)
    hinge = np.clip(1.0 - (float(a) ** ks[:, None]) / x[None, :], 0.0, None)
    bound = np.sqrt(np.sum(hinge * hinge, axis=1)) / math.sqrt(r)
    tau = np.log(x) / math.log(a)
    return Thm1Bound(bound, tau, float(tau[-1] - tau[0]), r, rep.stable_rank, rep.condition_number)


def ns_error_curve(G, cfg: NsConfig, k_max: int) -> np.ndarray:
    """Measured ``||X_k - Orth(G)||_F / sqrt(r)`` for ``k = 0..k_max``."""
    G = as_matrix(G, "G")
    r = svd(G).rank
    if r == 0:
        return np.zeros(k_max + 1)
    _, traj = ns_run(G, NsConfig(cfg.polynomial, k_max, cfg.prescale), record=True)
    return np.asarray(traj.per_step_error) / math.sqrt(r)


def error_decomposition(M, equil: EquilConfig, ns: NsConfig, slack: float = 1e-9) -> dict:
    """Split ``||NS(S(M)) - Orth(M)||_F`` into approximation error and bias."""
    M = as_matrix(M, "M")
    if not np.any(M):
        raise DomainError("error decomposition needs a nonzero matrix")
    SM = diag_pre(M, equil).result
    ns_out = ns_run(SM, ns)[0]
    orth_s = polar_factor(SM)
    orth_m = polar_factor(M)
    approx = float(np.linalg.norm(ns_out - orth_s))
    bias = float(np.linalg.norm(orth_s - orth_m))
    total = float(np.linalg.norm(ns_out - orth_m))
    return {
        "approx_error": approx,
        "precond_bias": bias,
        "total": total,
        "triangle_ok": total <= approx + bias + slack,
    }


def sylvester_diag(d, E) -> np.ndarray:
    """Solve ``D L + L D = E`` for diagonal ``D = diag(d) > 0``: ``L_ij = E_ij / (d_i + d_j)``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise DomainError("Sylvester solve needs a positive diagonal")
    return np.asarray(E, dtype=np.float64) / (d[:, None] + d[None, :])


@dataclass
class WhiteningReport:
    side: str
    scale_matrix_diag: np.ndarray
    gram_residual_norm: float
    sylvester_solution: np.ndarray
    zeroth_residual: float
    first_order_residual: float
    col_scale_diag: np.ndarray | None = field(default=None)


def _full_rank(M: np.ndarray, rank_target: int, what: str):
    if svd(M).rank < rank_target:
        raise DomainError(f"whitening needs full {what} rank")


def whitening_first_order(M, side: str) -> WhiteningReport:
    """Zeroth- and first-order whitening residuals against the exact polar factor.

    column: ``Orth(M) ~ N_c - N_c L_c D_c^{-1}`` with ``N_c = M D_c^{-1}``, ``D_c``
    the column norms and ``D_c L_c + L_c D_c = D_c C_c D_c``.
    row: the mirror image with ``N_r = D_r^{-1} M``.
    two_sided: centered at ``H = D_r^{-1/2} M D_c^{-1/2}`` (squared-norm scalers)
    with correction ``-H C / 2``; no marginal rescaling is left to correct.
    Residuals are spectral norms.
    """
    M = as_matrix(M, "M")
    p, q = M.shape
    orth = None
    if side == "column":
        _full_rank(M, q, "column")
        d = np.linalg.norm(M, axis=0)
        N = M / d[None, :]
        C = N.T @ N - np.eye(q)
        L = sylvester_diag(d, d[:, None] * C * d[None, :])
        approx = N - N @ L / d[None, :]
        orth = polar_factor(M)
        return WhiteningReport(
            side, d, spectral_norm(C), L,
            spectral_norm(orth - N), spectral_norm(orth - approx),
        )
    if side == "row":
        _full_rank(M, p, "row")
        d = np.linalg.norm(M, axis=1)
        N = M / d[:, None]
        C = N @ N.T - np.eye(p)
        L = sylvester_diag(d, d[:, None] * C * d[None, :])
        approx = N - (L / d[:, None]) @ N
        orth = polar_factor(M)
        return WhiteningReport(
            side, d, spectral_norm(C), L,
            spectral_norm(orth - N), spectral_norm(orth - approx),
        )
    if side == "two_sided":
        rows = np.sum(M * M, axis=1)
        cols = np.sum(M * M, axis=0)
        if np.any(rows == 0) or np.any(cols == 0):
            raise DomainError("two-sided whitening needs every row and column nonzero")
        _full_rank(M, min(p, q), "column" if p >= q else "row")
        eq = diag_pre(M, EquilConfig(EquilMode.RC, 0.0))
        H = eq.result
        if p >= q:
            C = H.T @ H - np.eye(q)
            approx = H - 0.5 * H @ C
        else:
            C = H @ H.T - np.eye(p)
            approx = H - 0.5 * C @ H
        orth = polar_factor(H)
        return WhiteningReport(
            side, np.sqrt(rows), spectral_norm(C), 0.5 * C,
            spectral_norm(orth - H), spectral_norm(orth - approx),
            col_scale_diag=np.sqrt(cols),
        )
    raise ValueError(f"side must be 'row', 'column' or 'two_sided', got {side!r}")


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(w)) @ V.T


def whitening_family(side: str, t: float, shape=(24, 16), seed: int = 0,
                     scale_spread: float = 3.0) -> np.ndarray:
    """A matrix whose normalized Gram residual has spectral norm ``t``.

    column: ``M = Q (I + t S)^{1/2} D`` with ``Q`` orthonormal columns, ``S``
    symmetric, zero-diagonal, ``||S||_2 = 1`` and ``D`` a fixed positive diagonal
    in ``[1, scale_spread]``; the columns of ``Q (I + t S)^{1/2}`` have unit norm.
    row: the transpose construction. two_sided: square ``Q (I + t S)^{1/2}``,
    whose equilibrated Gram residual is ``O(t)``.
    Only ``t`` changes the matrix for a fixed ``seed``.
    """
    rng = Rng(seed)
    p, q = shape
    if side == "row":
        p, q = q, p
    if side == "two_sided":
        q = p = min(p, q)
    if p < q:
        p, q = q, p
    Q, R = np.linalg.qr(rng.normal_matrix(p, q))
    Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
    S = rng.normal_matrix(q, q)
    S = S + S.T
    np.fill_diagonal(S, 0.0)
    S /= np.max(np.abs(np.linalg.eigvalsh(S)))
    d = 10.0 ** (math.log10(scale_spread) * rng.uniform(q))
    N = Q @ _sym_sqrt(np.eye(q) + t * S)
    if side == "column":
        return N * d[None, :]
    if side == "row":
        return d[:, None] * N.T
    if side == "two_sided":
        return N
    raise ValueError(f"unknown side {side!r}")


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])


def whitening_slopes(side: str, t_grid, shape=(24, 16), seed: int = 0) -> dict:
    reports = [whitening_first_order(whitening_family(side, t, shape, seed), side) for t in t_grid]
    c = [r.gram_residual_norm for r in reports]
    z = [r.zeroth_residual for r in reports]
    f = [r.first_order_residual for r in reports]
    return {
        "gram": c, "zeroth": z, "first": f,
        "zeroth_slope": loglog_slope(c, z),
        "first_slope": loglog_slope(c, f),
    }


def chi_eps(rho_r: float, rho_c: float) -> float:
    return (rho_r + 1.0) * (rho_c + 1.0) / (4.0 * rho_r * rho_c) - (
        3.0 * rho_r * rho_c - rho_r - rho_c - 1.0
    ) / 4.0


@dataclass(frozen=True)
class ConvergenceConstants:
    variant: str
    C1: float
    C2: float
    denom: float
    m: int
    n: int
    sigma: float
    l_smooth: float
    a: float
    f_gap: float
    rho_r: float | None = None
    rho_c: float | None = None
    chi_eps: float | None = None
    g_inf: float | None = None
    eps: float | None = None
    rho: float | None = None
    eps_ns: float | None = None
    C1_ep: float | None = None
    C2_ep: float | None = None
    C1_ns: float | None = None
    C2_ns: float | None = None
    denom_ns: float | None = None
    warning: str | None = None

    def bound(self, T: float) -> float:
        """Right-hand side of the averaged-gradient-norm bound at horizon ``T``."""
        if T < 1:
            raise ValueError("T must be >= 1")
        return (self.f_gap + self.C1 * (1.0 + math.log(T)) + self.C2) / (self.denom * T**0.25)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise DomainError(f"{k} must be positive, got {v!r}")


def rc_constants(m, n, g_inf, eps, sigma, l_smooth, a, f_gap) -> ConvergenceConstants:
    """Constants of the exact-polar RC guarantee (no Nesterov, no weight decay)."""
    _positive(m=m, n=n, g_inf=g_inf, eps=eps, sigma=sigma, l_smooth=l_smooth, a=a)
    rho_r = math.sqrt(1.0 + n * g_inf**2 / eps)
    rho_c = math.sqrt(1.0 + m * g_inf**2 / eps)
    chi = chi_eps(rho_r, rho_c)
    L = l_smooth
    C1 = (a / L) * (2.0 * math.sqrt(2.0) * L**2 * a**2 * n + sigma**2) + a * L * (
        chi + rho_r * rho_c * math.sqrt(n)
    ) ** 2
    C2 = a * sigma**2 / L + 1.5 * L * a**2 * n
    warning = None
    if eps < 0.8 * g_inf**2 * max(m, n):
        warning = "eps below (4/5) g_inf^2 max(m, n): chi_eps is not guaranteed positive"
    return ConvergenceConstants(
        "rc", C1, C2, a * chi, int(m), int(n), sigma, L, a, f_gap,
        rho_r=rho_r, rho_c=rho_c, chi_eps=chi, g_inf=g_inf, eps=eps, warning=warning,
    )


def r_constants(m, n, rho, sigma, l_smooth, a, eps_ns, f_gap) -> ConvergenceConstants:
    """Constants of the R guarantee; ``eps_ns = 0`` is the exact-polar case."""
    _positive(m=m, n=n, sigma=sigma, l_smooth=l_smooth, a=a)
    if not 0.0 <= eps_ns < 1.0:
        raise DomainError(f"eps_ns must lie in [0, 1), got {eps_ns!r}")
    cap = a * (1.0 - eps_ns) / math.sqrt(m)
    if not 0.0 <= rho < cap:
        raise DomainError(
            f"weight-decay level rho must satisfy 0 <= rho < a (1 - eps_ns) / sqrt(m) = {cap!r}; got {rho!r}"
        )
    L = l_smooth

    def pair(e):
        lead = a * (1.0 + e) * math.sqrt(n) + rho
        c1 = (a / L) * (2.0 * math.sqrt(2.0) * L**2 * lead**2 + sigma**2) + a * L * (
            (1.0 - e) / math.sqrt(m) + (1.0 + e) * math.sqrt(n)
        ) ** 2
        c2 = a * sigma**2 / L + 1.5 * L * lead**2
        return c1, c2

    c1_ep, c2_ep = pair(0.0)
    c1_ns, c2_ns = pair(eps_ns)
    return ConvergenceConstants(
        "r", c1_ns, c2_ns, cap - rho, int(m), int(n), sigma, L, a, f_gap, rho=rho, eps_ns=eps_ns,
        C1_ep=c1_ep, C2_ep=c2_ep, C1_ns=c1_ns, C2_ns=c2_ns, denom_ns=cap - rho,
    )


def ns_inexactness(inputs, ns: NsConfig = NS5_CONFIG) -> dict:
    """Max spectral gap between NS output and exact polar factor over ``inputs``.

    ``delta_0`` is ``max ||Pi - Y0 Y0^T||_2`` with ``Y0`` the prescaled input on
    the side the iteration uses and ``Pi`` the projector onto its range. The
    bound ``1 - sqrt(1 - delta_0^(3^K))`` is the one for Taylor coefficients.
    """
    eps_ns = 0.0
    delta_0 = 0.0
    per_input = []
    for A in inputs:
        A = as_matrix(A, "input")
        if not np.any(A):
            per_input.append((0.0, 0.0))
            continue
        out = ns_run(A, ns)[0]
        gap = spectral_norm(out - polar_factor(A))
        B = A.T if A.shape[0] > A.shape[1] else A
        Y0 = B / prescale_factor(B, ns.prescale)
        U = svd(B).left_vectors
        D = U @ U.T - Y0 @ Y0.T
        delta = float(np.max(np.abs(np.linalg.eigvalsh(D))))
        per_input.append((gap, delta))
        eps_ns = max(eps_ns, gap)
        delta_0 = max(delta_0, delta)
    if ns.polynomial != TAYLOR:
        bound = math.nan
    elif delta_0 < 1.0:
        bound = 1.0 - math.sqrt(1.0 - delta_0 ** (3**ns.steps))
    else:
        bound = 1.0
    return {"eps_ns": eps_ns, "delta_0": delta_0, "lemma_bound": bound, "per_input": per_input}


def alignment_margin(M, ns: NsConfig = NS5_CONFIG) -> dict:
    """``<M, Orth(P M)>`` against ``||M||_F / sqrt(m)`` for the pseudo-inverse row scaler ``P``,
    and the same with NS replacing the exact polar factor and ``(1 - eps_ns)`` on the right."""
    M = as_matrix(M, "M")
    m = M.shape[0]
    R = diag_pre(M, EquilConfig(EquilMode.R, 0.0)).result
    O = polar_factor(R)
    O_ns = ns_run(R, ns)[0]
    eps = spectral_norm(O_ns - O)
    fro = float(np.linalg.norm(M))
    return {
        "lhs": float(np.sum(M * O)),
        "rhs": fro / math.sqrt(m),
        "lhs_ns": float(np.sum(M * O_ns)),
        "rhs_ns": (1.0 - eps) * fro / math.sqrt(m),
        "eps_ns": eps,
    }
