"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are also
repeated in the pytest terminal summary. Run standalone with
``python3 tests/test_acceptance.py`` to get just those lines.
"""

import math
import time

import numpy as np
import pytest

from muoneq import experiments as ex
from muoneq.cli import main
from muoneq.equilibrate import MODE_ORDER, EquilMode
from muoneq.io import meq1_bytes, meq1_parse
from muoneq.linalg import svd
from muoneq.newton_schulz import NS5_CONFIG, TAYLOR
from muoneq.optimizer import run, theory_config, wd_envelope_check
from muoneq.problems import EnsembleSpec, ensemble_member, grad_check, make_problem
from muoneq.rng import Rng, derive_seed
from muoneq.theory import chi_eps, whitening_slopes

RESULTS: list[str] = []
SEED = 42


def report(n, ok, detail):
    line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


_THM1 = {}


def thm1_ensemble():
    if "mats" not in _THM1:
        _THM1["mats"] = ex.shape_ensemble(((64, 64), (64, 256), (256, 64)), 500, 2.0, 1.5, SEED)
    return _THM1["mats"]


def test_01_thm1_bound_audit():
    mats = thm1_ensemble()
    t0 = time.perf_counter()
    res = ex.bound_audit(mats, TAYLOR, 10, tol=1e-10)
    dt = time.perf_counter() - t0
    _THM1["tau"] = res["tau_max_deviation"]
    worst = min(r["margin"] for r in res["records"])
    ok = res["violations"] == 0 and dt < 60
    report(1, ok, f"{len(mats)} matrices x k=0..10, violations {res['violations']}, "
                  f"worst margin {worst:.3e}, {dt:.1f}s (< 60s)")
    assert ok


def test_02_tau_identity():
    dev = _THM1.get("tau")
    if dev is None:
        dev = ex.bound_audit(thm1_ensemble(), TAYLOR, 0)["tau_max_deviation"]
    ok = dev <= 1e-10
    report(2, ok, f"max |tau_r - tau_1 - log_a kappa| = {dev:.3e} (<= 1e-10)")
    assert ok


def test_03_chi_floor():
    exact = abs(chi_eps(1.5, 1.5) - 1 / 144)
    rng = Rng(SEED)
    m = 1 + rng.integers(4096, 1000)
    n = 1 + rng.integers(4096, 1000)
    g = 10.0 ** (-3 + 6 * rng.uniform(1000))
    worst = math.inf
    for mi, ni, gi in zip(m, n, g):
        eps = 0.8 * gi**2 * max(mi, ni)
        rho_r = math.sqrt(1 + ni * gi**2 / eps)
        rho_c = math.sqrt(1 + mi * gi**2 / eps)
        worst = min(worst, chi_eps(rho_r, rho_c))
    ok = exact <= 1e-12 and worst >= 1 / 144 - 1e-12
    report(3, ok, f"|chi(3/2,3/2) - 1/144| = {exact:.1e}; min chi over 1000 draws {worst:.10f} "
                  f"(>= 1/144 = {1 / 144:.10f})")
    assert ok


def test_04_whitening_order():
    grid = [10.0 ** (-1 - 0.5 * i) for i in range(5)]
    t0 = time.perf_counter()
    parts, ok = [], True
    for side in ("row", "column", "two_sided"):
        r = whitening_slopes(side, grid, (24, 16), SEED)
        good = 1.8 <= r["first_slope"] <= 2.2 and 0.9 <= r["zeroth_slope"] <= 1.1
        ok &= good
        parts.append(f"{side} first {r['first_slope']:.3f} zeroth {r['zeroth_slope']:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 30
    report(4, ok, "; ".join(parts) + f"; {dt:.2f}s (< 30s)")
    assert ok


def test_05_alignment_audit():
    shapes = [(8, 8), (16, 32), (32, 16), (64, 128), (128, 64), (128, 256)]
    mats = ex.alignment_ensemble(1000, shapes, SEED)
    zero_row_mats = sum(bool(np.any(~np.any(M != 0, axis=1))) for M in mats)
    res = ex.align_audit(mats, tol=1e-9)
    ok = res["violations"] == 0 and zero_row_mats > 0
    min_margin = min(r["lhs"] - r["rhs"] for r in res["records"])
    min_margin_ns = min(r["lhs_ns"] - r["rhs_ns"] for r in res["records"])
    report(5, ok, f"1000 matrices ({zero_row_mats} with zero rows), violations {res['violations']}, "
                  f"min exact margin {min_margin:.3e}, min NS5 margin {min_margin_ns:.3e}")
    assert ok


def inexactness_inputs():
    out = []
    for i in range(400):
        rng = Rng(derive_seed(SEED + 6, i))
        m = 1 + rng.integers(12, 1)[0]
        n = 1 + rng.integers(12, 1)[0]
        spec = EnsembleSpec((int(m), int(n)), 0.6 * rng.uniform(1)[0], 0.0, 0.0, 1, SEED + i)
        scale = 10.0 ** (-1.0 + 2.0 * rng.uniform(1)[0])
        out.append(scale * ensemble_member(spec, i))
    return out


def test_06_ns5_inexactness():
    mats = inexactness_inputs()
    res = ex.inexactness_records(mats, NS5_CONFIG, slack=1e-6)
    full = [r for r in res["records"] if r["full_rank"]]
    in_scope = [r for r in full if r["delta_0"] <= 0.95]
    bound_ok = all(r["eps_ns"] <= r["lemma_bound"] + 1e-6 for r in in_scope)
    below_one = all(r["eps_ns"] < 1 for r in full)
    ok = bound_ok and below_one and len(in_scope) >= 50
    worst = max(r["eps_ns"] - r["lemma_bound"] for r in in_scope)
    report(6, ok, f"{len(full)} full-rank inputs, {len(in_scope)} with delta_0 <= 0.95; "
                  f"max(eps_ns - bound) {worst:.3e}; max eps_ns {max(r['eps_ns'] for r in full):.4f} (< 1)")
    assert ok


def test_07_fig1_reproduction():
    t0 = time.perf_counter()
    mats = ex.shape_ensemble(ex.DEFAULT_SHAPES, 200, 2.0, 1.5, SEED)
    recs = ex.ns_sweep(mats, MODE_ORDER, TAYLOR, 10, "frobenius", 1e-8)
    summ = ex.sweep_summary(recs)
    dt = time.perf_counter() - t0
    at5 = {r["mode"]: r for r in summ if r["k"] == 5}
    k_pre = at5["RC"]["median_kappa_pre"]
    k_rc = at5["RC"]["median_kappa_post"]
    ok = k_rc <= k_pre and at5["RC"]["median_error"] <= at5["None"]["median_error"] and dt < 120
    curves = ", ".join(f"{m} {at5[m]['median_error']:.4f}" for m in ("RC", "R", "C", "None"))
    report(7, ok, f"median kappa {k_pre:.1f} -> RC {k_rc:.1f}; median k=5 error: {curves}; {dt:.1f}s (< 120s)")
    for m in ("RC", "R", "C", "None"):
        curve = [r["median_error"] for r in summ if r["mode"] == m]
        print(f"    {m:>4} median error k=0..10: " + " ".join(f"{v:.3g}" for v in curve))
    assert ok


def test_08_error_triangle():
    mats = ex.shape_ensemble(((32, 32), (16, 48), (48, 16)), 60, 2.0, 1.5, SEED + 8)
    planted = []
    for i, M in enumerate(mats[:20]):
        M = M.copy()
        M[i % M.shape[0]] = 0.0
        planted.append(M)
    recs = ex.decompose_records(mats + planted, MODE_ORDER, 1e-8, NS5_CONFIG, 1e-9)
    tri = sum(not r["triangle_ok"] for r in recs)
    none_bias = max(r["precond_bias"] for r in recs if r["mode"] == "None")
    ok = tri == 0 and none_bias == 0.0
    report(8, ok, f"{len(recs)} (matrix, mode) pairs, triangle failures {tri}, max None bias {none_bias}")
    assert ok


def test_09_gradient_checks():
    lsq = make_problem("least-squares", (5, 4), 64, noise=0.1, seed=SEED, batch_size=8)
    mlp = make_problem("mlp2", (6, 8, 3), 48, noise=0.1, seed=SEED, batch_size=8)
    worst_l = worst_m = 0.0
    for i in range(10):
        rng = Rng(derive_seed(SEED + 9, i))
        X = rng.normal_matrix(5, 4)
        worst_l = max(worst_l, grad_check(lsq, [X], h=1e-6, seed=i))
        params = [p + 0.5 * rng.normal(p.size).reshape(p.shape) for p in mlp.init]
        worst_m = max(worst_m, grad_check(mlp, params, h=1e-6, seed=i))
    ok = worst_l < 1e-5 and worst_m < 1e-4
    report(9, ok, f"least squares max rel err {worst_l:.2e} (< 1e-5); two-layer net {worst_m:.2e} (< 1e-4)")
    assert ok


M10, N10 = 64, 32


def _lsq(seed):
    return make_problem("least-squares", (M10, N10), 4096, noise=0.01, seed=seed, batch_size=64)


def test_10_optimizer_smoke_and_envelope():
    a = 0.2 * math.sqrt(max(M10, N10))
    rho = 0.01 * a / math.sqrt(M10)
    t0 = time.perf_counter()
    parts, ok = [], True
    for seed in range(3):
        cfg = theory_config("R", 0.0, rho=rho, eps_ns=0.0)
        tr = run(_lsq(seed), cfg, 2000, seed=seed, eval_interval=10)
        ratio = min(tr.full_grad_norm) / tr.full_grad_norm[0]
        hit = next((s for s, g in zip(tr.eval_steps, tr.full_grad_norm) if g < 0.1 * tr.full_grad_norm[0]), None)
        env = wd_envelope_check(tr, cfg, rho, 0.0)
        ok &= hit is not None and env["ok"]
        parts.append(f"seed {seed}: <10% at step {hit}, min ratio {ratio:.3f}, envelope "
                     f"{'ok' if env['ok'] else 'VIOLATED'} (max step ratio {env['max_step_ratio']:.3f})")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    report("10a", ok, "; ".join(parts) + f"; {dt:.1f}s (< 120s)")
    assert ok


def test_10_smoothed_loss_monotone():
    """Muon (mode None) and MuonEq(R) at lambda = 0: the 50-step moving average of
    the training loss must never increase."""
    parts, ok = [], True
    for mode in ("None", "R"):
        for seed in range(3):
            tr = run(_lsq(seed), theory_config(mode, 0.0), 2000, seed=seed, eval_interval=2000)
            rep = ex.smoothed_monotone_report(tr.loss, window=50)
            ok &= rep["monotone"]
            parts.append(f"{mode}/s{seed}: {rep['increases']} increases, max rel {rep['max_relative_increase']:.1e}")
    report("10b", ok, "; ".join(parts))
    assert ok


def test_11_determinism_and_io(tmp_path):
    args = ["ns-sweep", "--count", "8", "--shapes", "16x16,16x32", "--k-max", "5", "--format", "csv+svg"]
    codes = [main([*args, "--out", str(tmp_path / d)]) for d in ("a", "b")]
    names = ("ns_sweep.csv", "ns_sweep_summary.csv", "ns_sweep.svg", "manifest.json")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in names)
    targs = ["train", "--steps", "40", "--m", "8", "--n", "4", "--n-samples", "128"]
    codes += [main([*targs, "--out", str(tmp_path / d)]) for d in ("c", "d")]
    same &= (tmp_path / "c" / "train_r.csv").read_bytes() == (tmp_path / "d" / "train_r.csv").read_bytes()

    specials = np.array([0.0, -0.0, 5e-324, -5e-324, 2.2250738585072014e-308, 2.225073858507201e-308,
                         1.7976931348623157e308, -1.7976931348623157e308, 1.0, -1.0])
    rng = Rng(SEED + 11)
    exact = 0
    for i in range(100):
        m, n = (1 + int(v) for v in rng.integers(9, 2))
        A = rng.normal_matrix(m, n) * 10.0 ** (rng.integers(600, 1)[0] - 300.0)
        idx = rng.integers(m * n, max(1, (m * n) // 3))
        A.reshape(-1)[idx] = specials[rng.integers(len(specials), len(idx))]
        A[~np.isfinite(A)] = 0.0
        B = meq1_parse(meq1_bytes(A))
        exact += B.tobytes() == A.tobytes()
    ok = codes == [0, 0, 0, 0] and same and exact == 100
    report(11, ok, f"CLI exit codes {codes}, byte-identical outputs {same}, MEQ1 exact round trips {exact}/100")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
