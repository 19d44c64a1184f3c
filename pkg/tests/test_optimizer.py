import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from muoneq.equilibrate import EquilConfig
from muoneq.linalg import polar_factor
from muoneq.newton_schulz import NS5_CONFIG
from muoneq.optimizer import (
    OptConfig,
    OptState,
    ScheduleSpec,
    run,
    schedule_eval,
    step,
    theory_config,
    wd_envelope_check,
)
from muoneq.problems import evaluate, make_problem, sample_batch
from muoneq.rng import Rng


def test_schedule_examples():
    assert schedule_eval(ScheduleSpec.theory_lr(), 16) == 0.125
    assert schedule_eval(ScheduleSpec.theory_beta(), 4) == 0.5
    assert schedule_eval(ScheduleSpec.theory_beta(), 1) == 0.0
    assert schedule_eval(ScheduleSpec.constant(0.95), 1000) == 0.95
    assert schedule_eval(ScheduleSpec.power(2.0, -0.5), 4) == 1.0
    with pytest.raises(ValueError):
        schedule_eval(ScheduleSpec.theory_lr(), 0)


def test_theory_wd_and_warmup_cosine():
    wd = ScheduleSpec.theory_wd(0.5, x1_norm=1.0, n_dim=4, a_scale=0.25)
    assert schedule_eval(wd, 16) == pytest.approx(0.5 * 0.5 / (1 + 4 * 0.25 * 2))
    with pytest.raises(ValueError):
        schedule_eval(ScheduleSpec.theory_wd(0.5), 1)
    wc = ScheduleSpec.warmup_cosine(1.0, 10, 110)
    assert schedule_eval(wc, 5) == 0.5 and schedule_eval(wc, 10) == 1.0
    assert schedule_eval(wc, 60) == pytest.approx(0.5) and schedule_eval(wc, 200) == 0.0


@given(st.integers(1, 10**6))
def test_theory_schedules_in_range(t):
    assert 0 <= schedule_eval(ScheduleSpec.theory_beta(), t) < 1
    assert 0 < schedule_eval(ScheduleSpec.theory_lr(), t) <= 1


def test_hand_traced_step():
    cfg = theory_config("R", 0.0, ns=None)
    cfg = OptConfig(cfg.equil, None, False, cfg.lr, cfg.beta, cfg.weight_decay, 0.2)
    st_, rep = step(OptState.init([[0.0]]), np.array([[2.0]]), cfg)
    assert st_.param[0, 0] == pytest.approx(-0.2, abs=1e-15)
    assert st_.momentum[0, 0] == 2.0 and st_.step_count == 2


def test_zero_gradient_is_pure_decay():
    cfg = OptConfig(weight_decay=ScheduleSpec.constant(0.1))
    X = np.arange(6.0).reshape(2, 3)
    st_, _ = step(OptState.init(X), np.zeros((2, 3)), cfg)
    np.testing.assert_allclose(st_.param, (1 - 0.1 * 1.0) * X)


def test_no_bias_correction():
    cfg = OptConfig(beta=ScheduleSpec.constant(0.5))
    st_, _ = step(OptState.init([[0.0]]), np.array([[2.0]]), cfg)
    assert st_.momentum[0, 0] == 1.0


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        step(OptState.init(np.zeros((2, 2))), np.zeros((3, 2)), OptConfig())


def test_nesterov_uses_lookahead_in_equilibration():
    cfg = OptConfig(equil=EquilConfig("R", 0.0), ns=None, nesterov=True,
                    beta=ScheduleSpec.constant(0.9), scale=1.0, lr=ScheduleSpec.constant(1.0))
    M0 = np.array([[1.0, 0.0], [0.0, 1.0]])
    G = np.array([[0.0, 3.0], [1.0, 0.0]])
    state = OptState(np.zeros((2, 2)), M0.copy(), 2)
    new, rep = step(state, G, cfg, keep_equil=True)
    M1 = 0.9 * M0 + 0.1 * G
    Mt = 0.9 * M1 + 0.1 * G
    expect_hat = Mt / np.linalg.norm(Mt, axis=1, keepdims=True)
    np.testing.assert_allclose(rep.equil_out.result, expect_hat, rtol=1e-14)
    np.testing.assert_allclose(new.param, -polar_factor(expect_hat), atol=1e-14)


def muon_reference(problem, steps, seed):
    """Straight-line Muon: theory schedules, exact polar, no equilibration, no decay."""
    X = problem.init[0].copy()
    M = np.zeros_like(X)
    rng = Rng(seed)
    a = 0.2 * math.sqrt(max(X.shape))
    losses = []
    for t in range(1, steps + 1):
        idx = sample_batch(problem, rng)
        loss, (G,) = problem.loss_grad([X], idx)
        losses.append(loss)
        beta = 1 - t**-0.5
        M = beta * M + (1 - beta) * G
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        O = U @ Vt if s[0] > 0 else np.zeros_like(M)
        X = X - a * t**-0.75 * O
    return np.array(losses), X


def test_mode_none_matches_reference_muon():
    p = make_problem("lsq", (8, 5), 200, noise=0.1, seed=3, batch_size=16)
    trace = run(p, theory_config("None", ns=None), 60, seed=9, eval_interval=60)
    losses, X = muon_reference(p, 60, 9)
    np.testing.assert_allclose(trace.loss, losses, rtol=0, atol=1e-10)
    np.testing.assert_allclose(trace.final_params[0], X, atol=1e-10)


def test_row_permutation_equivariance():
    p = make_problem("lsq", (6, 4), 100, noise=0.1, seed=4, batch_size=10)
    perm = np.array([3, 0, 5, 1, 4, 2])
    cfg = theory_config("R", 0.0)
    X = OptState.init(np.random.default_rng(0).standard_normal((6, 4)))
    Xp = OptState.init(X.param[perm])
    rng = Rng(1)
    for _ in range(30):
        G = evaluate(p, [X.param], sample_batch(p, rng))["grad"][0]
        X, _ = step(X, G, cfg)
        Xp, _ = step(Xp, G[perm], cfg)
    np.testing.assert_allclose(Xp.param, X.param[perm], atol=1e-9)


def test_first_momentum_equals_gradient_and_step_bound():
    p = make_problem("lsq", (6, 9), 100, noise=0.1, seed=5, batch_size=10)
    cfg = theory_config("R", 0.0)
    st_ = OptState.init(p.init[0])
    rng = Rng(2)
    G = evaluate(p, [st_.param], sample_batch(p, rng))["grad"][0]
    new, rep = step(st_, G, cfg)
    np.testing.assert_array_equal(new.momentum, G)
    for t in range(2, 40):
        G = evaluate(p, [new.param], sample_batch(p, rng))["grad"][0]
        old = new.param
        new, rep = step(new, G, cfg)
        a_eta = 0.2 * 3 * t**-0.75
        assert np.linalg.norm(new.param - old) <= a_eta * rep.o_norms["frobenius"] * (1 + 1e-12)
        assert rep.o_norms["frobenius"] <= math.sqrt(6) * (1 + 1e-12)


def test_run_examples():
    p = make_problem("lsq", (16, 8), 512, noise=0.01, seed=1, batch_size=32)
    for mode in ("None", "R"):
        tr = run(p, theory_config(mode, 0.0), 500, seed=3, eval_interval=499)
        assert tr.full_loss[-1] < tr.full_loss[0]
    assert len(run(p, theory_config("R"), 1, seed=0)) == 1
    a = run(p, theory_config("RC", 1e-8), 20, seed=5)
    b = run(p, theory_config("RC", 1e-8), 20, seed=5)
    assert a.loss == b.loss and a.final_params[0].tobytes() == b.final_params[0].tobytes()


def test_mlp_run_uses_plain_steps_for_vectors():
    p = make_problem("mlp2", (6, 8, 3), 128, noise=0.1, seed=2, batch_size=16)
    tr = run(p, theory_config("R", 1e-8), 50, seed=1, eval_interval=49)
    assert len(tr.matrix_stats) == 2 and tr.full_loss[-1] < tr.full_loss[0]


def envelope_run(rho):
    p = make_problem("lsq", (12, 6), 256, noise=0.05, seed=6, batch_size=16)
    a = 0.2 * math.sqrt(12)
    cfg = theory_config("R", 0.0, rho=rho * a / math.sqrt(12))
    return run(p, cfg, 200, seed=2, eval_interval=200), cfg, rho * a / math.sqrt(12)


def test_envelope_zero_rho():
    tr, cfg, rho = envelope_run(0.0)
    r = wd_envelope_check(tr, cfg, rho, 0.0)
    assert r["ok"] and r["max_lambda_x"] == 0.0


def test_envelope_theory_run_and_corruption():
    tr, cfg, rho = envelope_run(0.01)
    assert wd_envelope_check(tr, cfg, rho, 0.0)["ok"]
    s = tr.matrix_stats[0]
    s["weight_decay"] = [2 * v for v in s["weight_decay"]]
    assert not wd_envelope_check(tr, cfg, rho, 0.0)["ok"]


def test_envelope_requires_theory_schedules():
    tr, cfg, rho = envelope_run(0.0)
    with pytest.raises(ValueError):
        wd_envelope_check(tr, OptConfig(lr=ScheduleSpec.constant(0.1)), rho, 0.0)


def test_ns_inside_step_is_ns5_by_default():
    assert OptConfig().ns == NS5_CONFIG
