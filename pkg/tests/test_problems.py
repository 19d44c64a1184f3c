import numpy as np
import pytest

from muoneq.linalg import svd
from muoneq.problems import (
    EnsembleSpec,
    LeastSquares,
    canonical_kind,
    ensemble,
    ensemble_member,
    evaluate,
    grad_check,
    make_problem,
)
from muoneq.rng import Rng


def test_least_squares_zero_gradient_at_truth():
    p = make_problem("least-squares", (4, 3), 50, noise=0.0, seed=1, batch_size=5)
    out = evaluate(p, [p.x_star])
    assert out["loss"] == pytest.approx(0, abs=1e-28)
    np.testing.assert_allclose(out["grad"][0], 0, atol=1e-14)


def test_full_gradient_is_mean_of_per_sample_gradients():
    p = make_problem("lsq", (2, 3), 3, noise=0.5, seed=2, batch_size=1)
    X = np.random.default_rng(0).standard_normal((2, 3))
    per = [evaluate(p, [X], [i])["grad"][0] for i in range(3)]
    np.testing.assert_allclose(evaluate(p, [X])["grad"][0], np.mean(per, axis=0), rtol=1e-14)


def test_mlp_loss_nonnegative():
    p = make_problem("mlp2", (5, 7, 3), 40, noise=0.2, seed=3, batch_size=8)
    for s in range(5):
        params = [np.random.default_rng(s).standard_normal(q.shape) for q in p.init]
        assert evaluate(p, params)["loss"] >= 0


def test_batch_of_all_indices_equals_full():
    p = make_problem("lsq", (3, 4), 20, noise=0.1, seed=4, batch_size=4)
    X = np.ones((3, 4))
    a, b = evaluate(p, [X], np.arange(20)), evaluate(p, [X])
    assert a["loss"] == pytest.approx(b["loss"], rel=1e-14)
    np.testing.assert_allclose(a["grad"][0], b["grad"][0], rtol=1e-13)


def test_shape_mismatch_and_bad_inputs():
    p = make_problem("lsq", (3, 4), 20, seed=4, batch_size=4)
    with pytest.raises(ValueError):
        evaluate(p, [np.ones((4, 3))])
    with pytest.raises(ValueError):
        make_problem("lsq", (0, 4), 20)
    with pytest.raises(ValueError):
        make_problem("lsq", (3, 4), 2, batch_size=4)
    with pytest.raises(ValueError):
        canonical_kind("cnn")


@pytest.mark.parametrize("point", range(10))
def test_grad_check_least_squares(point):
    p = make_problem("lsq", (4, 3), 30, noise=0.1, seed=5, batch_size=4)
    X = np.random.default_rng(point).standard_normal((4, 3))
    assert grad_check(p, [X], h=1e-6) < 1e-5


def test_grad_check_exact_on_scalar_quadratic():
    p = LeastSquares(np.array([[2.0]]), np.array([[1.0]]), np.zeros((1, 1)), 1, 0.0)
    assert grad_check(p, [np.array([[0.7]])], h=1e-6) < 1e-9


@pytest.mark.parametrize("point", range(10))
def test_grad_check_mlp(point):
    p = make_problem("mlp2", (5, 6, 3), 25, noise=0.1, seed=6, batch_size=5)
    params = [q + 0.3 * np.random.default_rng(point).standard_normal(q.shape) for q in p.init]
    assert grad_check(p, params, h=1e-6) < 1e-4


def test_grad_check_detects_wrong_gradient():
    p = make_problem("lsq", (3, 3), 20, seed=7, batch_size=4)
    orig = p.loss_grad
    p.loss_grad = lambda params, idx=None: (orig(params, idx)[0], [2 * g for g in orig(params, idx)[1]])
    assert grad_check(p, [np.ones((3, 3))]) > 0.1


def test_stochastic_gradient_unbiased_monte_carlo():
    p = make_problem("lsq", (3, 2), 64, noise=0.3, seed=8, batch_size=1)
    X = np.ones((3, 2))
    rng = Rng(9)
    draws = np.array([evaluate(p, [X], rng)["grad"][0] for _ in range(10_000)])
    full = evaluate(p, [X])["grad"][0]
    sigma = draws.std(axis=0)
    assert np.all(np.abs(draws.mean(axis=0) - full) <= 3 * sigma / 100)


def test_smoothness_constant():
    p = make_problem("lsq", (2, 3), 40, seed=10, batch_size=4)
    A = p.inputs
    assert p.smoothness() == pytest.approx(np.linalg.eigvalsh(A @ A.T / 40).max())
    assert p.min_loss() <= evaluate(p, [p.x_star])["loss"] + 1e-15


def test_ensemble_isotropic_has_unit_condition_number():
    for M in ensemble(EnsembleSpec((8, 5), 0, 0, 0, count=5, seed=1)):
        s = svd(M).singular_values
        assert s[0] / s[-1] == pytest.approx(1, abs=1e-8)


def test_ensemble_median_condition_number():
    mats = ensemble(EnsembleSpec((64, 64), 2.0, 0, 0, count=100, seed=42))
    kappas = [svd(M).singular_values[0] / svd(M).singular_values[-1] for M in mats]
    assert 50 <= np.median(kappas) <= 200


def test_ensemble_deterministic_bitwise():
    spec = EnsembleSpec((6, 9), 1.0, 0.5, 0.5, count=3, seed=5)
    for a, b in zip(ensemble(spec), ensemble(spec)):
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(ensemble(spec)[2], ensemble_member(spec, 2))


def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec((0, 3))
    with pytest.raises(ValueError):
        EnsembleSpec(spectrum=-1)
    with pytest.raises(ValueError):
        EnsembleSpec(count=0)
