"""Ensemble sweeps and audits shared by the command line and the test-suite."""

from __future__ import annotations

import math
from statistics import median

import numpy as np

from muoneq.equilibrate import MODE_ORDER, EquilConfig, EquilMode, diag_pre
from muoneq.linalg import svd
from muoneq.newton_schulz import NsConfig, NsPolynomial
from muoneq.problems import EnsembleSpec, ensemble_member
from muoneq.rng import Rng, derive_seed
from muoneq import theory

DEFAULT_SHAPES = ((64, 64), (64, 256), (256, 64), (256, 256))


def parse_shapes(text: str) -> list[tuple[int, int]]:
    shapes = []
    for part in str(text).split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            m, n = (int(v) for v in part.split("x"))
        except ValueError:
            raise ValueError(f"bad shape {part!r}; expected MxN") from None
        if m < 1 or n < 1:
            raise ValueError(f"bad shape {part!r}; dimensions must be positive")
        shapes.append((m, n))
    if not shapes:
        raise ValueError("no shapes given")
    return shapes


def parse_modes(text: str) -> list[EquilMode]:
    modes = [EquilMode.parse(p.strip()) for p in str(text).split(",") if p.strip()]
    if not modes:
        raise ValueError("no modes given")
    return sorted(set(modes), key=MODE_ORDER.index)


def shape_ensemble(shapes, count, spectrum, imbalance, seed):
    """``count`` members cycling through ``shapes``; member ``i`` uses the derived seed for ``i``."""
    out = []
    for i in range(count):
        spec = EnsembleSpec(tuple(shapes[i % len(shapes)]), spectrum, imbalance, imbalance, 1, seed)
        out.append(ensemble_member(spec, i))
    return out


def kappa(A) -> float:
    s = svd(A).singular_values
    return float(s[0] / s[-1]) if s.size else math.nan


def ns_sweep(matrices, modes, polynomial: NsPolynomial, k_max: int,
             prescale: str = "frobenius", epsilon: float = 1e-8) -> list[dict]:
    """Per (matrix, mode, k): ``||X_k - Orth(S(M))||_F / sqrt(r)`` plus spectral diagnostics of ``S(M)``."""
    records = []
    cfg = NsConfig(polynomial, k_max, prescale)
    for mid, M in enumerate(matrices):
        k_pre = kappa(M)
        for mode in modes:
            SM = diag_pre(M, EquilConfig(mode, epsilon)).result
            rep = theory.spectral_report(SM)
            errs = theory.ns_error_curve(SM, cfg, k_max)
            for k, e in enumerate(errs):
                records.append({
                    "matrix_id": mid,
                    "shape": f"{M.shape[0]}x{M.shape[1]}",
                    "mode": mode.value,
                    "k": k,
                    "error": float(e),
                    "kappa_pre": k_pre,
                    "kappa_post": rep.condition_number,
                    "stable_rank_post": rep.stable_rank,
                    "entropy_post": rep.entropy,
                })
    return records


def sweep_summary(records) -> list[dict]:
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in records:
        groups.setdefault((r["mode"], r["k"]), []).append(r)
    order = {m.value: i for i, m in enumerate(MODE_ORDER)}
    out = []
    for (mode, k), rs in sorted(groups.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])):
        out.append({
            "mode": mode,
            "k": k,
            "median_error": median(r["error"] for r in rs),
            "median_kappa_pre": median(r["kappa_pre"] for r in rs),
            "median_kappa_post": median(r["kappa_post"] for r in rs),
            "count": len(rs),
        })
    return out


def bound_audit(matrices, polynomial: NsPolynomial, k_max: int, tol: float = 1e-10) -> dict:
    """Measured Frobenius-prescaled NS error against the lower bound, plus the tau identity."""
    cfg = NsConfig(polynomial, k_max, "frobenius")
    records = []
    violations = 0
    tau_dev = 0.0
    for mid, G in enumerate(matrices):
        b = theory.thm1_bound(G, polynomial.a, k_max)
        meas = theory.ns_error_curve(G, cfg, k_max)
        tau_dev = max(tau_dev, abs(b.tau_spread - math.log(b.condition_number) / math.log(polynomial.a)))
        for k in range(k_max + 1):
            ok = meas[k] >= b.bound_per_k[k] - tol
            violations += not ok
            records.append({
                "matrix_id": mid, "k": k, "measured": float(meas[k]),
                "bound": float(b.bound_per_k[k]), "margin": float(meas[k] - b.bound_per_k[k]), "ok": bool(ok),
            })
    return {"records": records, "violations": violations, "tau_max_deviation": tau_dev}


def decompose_records(matrices, modes, epsilon: float, ns: NsConfig, slack: float = 1e-9) -> list[dict]:
    out = []
    for mid, M in enumerate(matrices):
        for mode in modes:
            d = theory.error_decomposition(M, EquilConfig(mode, epsilon), ns, slack)
            out.append({"matrix_id": mid, "mode": mode.value, **d})
    return out


def alignment_ensemble(count: int, shapes, seed: int, zero_row_fraction: float = 0.1) -> list[np.ndarray]:
    """Gaussian matrices with 2-decade log-uniform row scales; every other member
    gets planted zero rows (at least one)."""
    out = []
    for i in range(count):
        rng = Rng(derive_seed(seed, i))
        m, n = shapes[i % len(shapes)]
        M = rng.normal_matrix(m, n) * (10.0 ** (-2.0 * rng.uniform(m)))[:, None]
        if i % 2 == 1 and m > 1:
            k = max(1, int(round(zero_row_fraction * m)))
            rows = np.unique(rng.integers(m, k))
            M[rows] = 0.0
        out.append(M)
    return out


def align_audit(matrices, tol: float = 1e-9) -> dict:
    records = []
    violations = 0
    for mid, M in enumerate(matrices):
        a = theory.alignment_margin(M)
        ok_exact = a["lhs"] >= a["rhs"] - tol
        ok_ns = a["lhs_ns"] >= a["rhs_ns"] - tol
        violations += (not ok_exact) + (not ok_ns)
        records.append({
            "matrix_id": mid, "shape": f"{M.shape[0]}x{M.shape[1]}",
            "lhs": a["lhs"], "rhs": a["rhs"], "lhs_ns": a["lhs_ns"], "rhs_ns": a["rhs_ns"],
            "eps_ns": a["eps_ns"], "ok": bool(ok_exact and ok_ns),
        })
    return {"records": records, "violations": violations}


def inexactness_records(matrices, ns: NsConfig, slack: float = 1e-6) -> dict:
    """Per-input ``eps_ns``, ``delta_0`` and the lemma bound; a violation is
    ``eps_ns >= 1`` on a full-rank input or ``eps_ns`` above the bound by more than ``slack``."""
    records = []
    violations = 0
    for mid, A in enumerate(matrices):
        r = theory.ns_inexactness([A], ns)
        full_rank = svd(A).rank == min(A.shape)
        ok = True
        if full_rank and np.any(A):
            ok = r["eps_ns"] < 1.0
            if r["delta_0"] < 1.0 and not math.isnan(r["lemma_bound"]):
                ok = ok and r["eps_ns"] <= r["lemma_bound"] + slack
        violations += not ok
        records.append({
            "matrix_id": mid, "shape": f"{A.shape[0]}x{A.shape[1]}", "full_rank": bool(full_rank),
            "eps_ns": r["eps_ns"], "delta_0": r["delta_0"], "lemma_bound": r["lemma_bound"], "ok": bool(ok),
        })
    return {"records": records, "violations": violations}


def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if window < 1 or x.size < window:
        raise ValueError(f"need 1 <= window <= len(x), got window {window} for length {x.size}")
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window


def smoothed_monotone_report(x, window: int = 50, rel_tol: float = 0.0) -> dict:
    """Increases of the ``window``-step moving average.

    ``monotone`` is true when no step of the smoothed series rises by more than
    ``rel_tol`` times its current value.
    """
    s = moving_average(x, window)
    d = np.diff(s)
    rel = d / np.maximum(np.abs(s[:-1]), np.finfo(float).tiny)
    return {
        "monotone": bool(np.all(rel <= rel_tol)),
        "increases": int(np.sum(d > 0)),
        "max_relative_increase": float(max(0.0, rel.max())) if rel.size else 0.0,
        "first": float(s[0]),
        "last": float(s[-1]),
    }
