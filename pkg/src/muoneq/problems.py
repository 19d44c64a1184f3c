"""Synthetic objectives with analytic gradients and controlled-spectrum ensembles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from muoneq.rng import Rng, derive_seed

KINDS = ("stochastic_least_squares", "mlp2_classification")
_ALIASES = {
    "least-squares": "stochastic_least_squares",
    "least_squares": "stochastic_least_squares",
    "lsq": "stochastic_least_squares",
    "mlp2": "mlp2_classification",
    "mlp": "mlp2_classification",
}


def canonical_kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass
class LeastSquares:
    """``f(X) = 1/(2N) sum_i ||X a_i - b_i||^2`` with ``b_i = X* a_i + noise * nu_i``.

    ``inputs`` holds the ``a_i`` as columns (n x N), ``targets`` the ``b_i`` (m x N).
    """

    inputs: np.ndarray
    targets: np.ndarray
    x_star: np.ndarray
    batch_size: int
    noise: float
    init: list[np.ndarray] = field(default_factory=list)
    kind: str = "stochastic_least_squares"

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [self.x_star.shape]

    def loss_grad(self, params, idx=None):
        (X,) = params
        A = self.inputs if idx is None else self.inputs[:, idx]
        B = self.targets if idx is None else self.targets[:, idx]
        N = A.shape[1]
        R = X @ A - B
        loss = 0.5 * float(np.sum(R * R)) / N
        return loss, [R @ A.T / N]

    def smoothness(self) -> float:
        """``L = lambda_max(A A^T) / N``."""
        return float(np.linalg.eigvalsh(self.inputs @ self.inputs.T / self.n_samples)[-1])

    def minimizer(self) -> np.ndarray:
        A, B = self.inputs, self.targets
        return np.linalg.solve(A @ A.T, A @ B.T).T

    def min_loss(self) -> float:
        return self.loss_grad([self.minimizer()])[0]


@dataclass
class Mlp2:
    """Two-layer tanh network with softmax cross-entropy on a Gaussian mixture.

    Parameters are ``[W1 (h x d), b1 (h), W2 (k x h), b2 (k)]``.
    """

    inputs: np.ndarray  # d x N
    labels: np.ndarray  # N ints in [0, k)
    n_classes: int
    hidden: int
    batch_size: int
    noise: float
    init: list[np.ndarray] = field(default_factory=list)
    kind: str = "mlp2_classification"

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        d = self.inputs.shape[0]
        return [(self.hidden, d), (self.hidden,), (self.n_classes, self.hidden), (self.n_classes,)]

    def loss_grad(self, params, idx=None):
        W1, b1, W2, b2 = params
        Xd = self.inputs if idx is None else self.inputs[:, idx]
        y = self.labels if idx is None else self.labels[idx]
        N = Xd.shape[1]
        H = np.tanh(W1 @ Xd + b1[:, None])
        Z = W2 @ H + b2[:, None]
        Z = Z - Z.max(axis=0, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))
        cols = np.arange(N)
        loss = -float(np.mean(logp[y, cols]))
        dZ = np.exp(logp)
        dZ[y, cols] -= 1.0
        dZ /= N
        gW2 = dZ @ H.T
        gb2 = dZ.sum(axis=1)
        dA = (W2.T @ dZ) * (1.0 - H * H)
        gW1 = dA @ Xd.T
        gb1 = dA.sum(axis=1)
        return loss, [gW1, gb1, gW2, gb2]


def make_problem(kind, dims, n_samples, noise=0.0, seed=0, batch_size=32):
    """Build a problem instance.

    ``dims`` is ``(m, n)`` for least squares (parameter ``m x n``) and
    ``(d_in, hidden, classes)`` for the two-layer network.
    """
    kind = canonical_kind(kind)
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    if n_samples < batch_size:
        raise ValueError(f"n_samples ({n_samples}) must be >= batch_size ({batch_size})")
    rng = Rng(seed)
    if kind == "stochastic_least_squares":
        if len(dims) != 2:
            raise ValueError("least squares needs dims = (m, n)")
        m, n = dims
        x_star = rng.normal_matrix(m, n) / np.sqrt(n)
        A = rng.normal_matrix(n, n_samples)
        B = x_star @ A + noise * rng.normal_matrix(m, n_samples)
        return LeastSquares(A, B, x_star, batch_size, noise, init=[np.zeros((m, n))])
    if len(dims) != 3:
        raise ValueError("mlp2 needs dims = (d_in, hidden, classes)")
    d, h, k = dims
    means = 2.0 * rng.normal_matrix(k, d) / np.sqrt(d)
    labels = rng.integers(k, n_samples)
    X = means[labels].T + (1.0 + noise) * rng.normal_matrix(d, n_samples) / np.sqrt(d)
    init = [
        rng.normal_matrix(h, d) / np.sqrt(d),
        np.zeros(h),
        rng.normal_matrix(k, h) / np.sqrt(h),
        np.zeros(k),
    ]
    return Mlp2(X, labels, k, h, batch_size, noise, init=init)


def _check_params(problem, params):
    params = [np.asarray(p, dtype=np.float64) for p in params]
    shapes = problem.shapes
    if len(params) != len(shapes) or any(p.shape != s for p, s in zip(params, shapes)):
        raise ValueError(
            f"parameter shapes {[p.shape for p in params]} do not match problem {shapes}"
        )
    return params


def sample_batch(problem, rng: Rng) -> np.ndarray:
    """Indices drawn uniformly with replacement, so mini-batch gradients are unbiased."""
    return rng.integers(problem.n_samples, problem.batch_size)


def evaluate(problem, params, batch=None) -> dict:
    """Loss and gradient list; full data when ``batch`` is None.

    ``batch`` is an index array or an :class:`Rng` to sample one from.
    """
    if isinstance(params, np.ndarray):
        params = [params]
    params = _check_params(problem, params)
    if isinstance(batch, Rng):
        batch = sample_batch(problem, batch)
    elif batch is not None:
        batch = np.asarray(batch, dtype=np.int64)
    loss, grads = problem.loss_grad(params, batch)
    return {"loss": loss, "grad": grads}


def grad_check(problem, params, h=1e-6, max_coords=64, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every coordinate is checked for parameters with at most ``max_coords``
    entries; larger ones use a seeded random subset. The relative error of a
    coordinate is ``|g - fd| / max(|g|, |fd|, 1e-8)``.
    """
    if isinstance(params, np.ndarray):
        params = [params]
    params = [np.array(p, dtype=np.float64) for p in params]
    _, grads = problem.loss_grad(params)
    rng = Rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.unique(rng.integers(flat.size, max_coords))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = problem.loss_grad(params)[0]
            flat[i] = orig - h
            fm = problem.loss_grad(params)[0]
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


@dataclass(frozen=True)
class EnsembleSpec:
    shape: tuple[int, int] = (64, 64)
    spectrum: float = 2.0
    row_scale_decades: float = 0.0
    col_scale_decades: float = 0.0
    count: int = 1
    seed: int = 42

    def __post_init__(self):
        m, n = self.shape
        if m < 1 or n < 1:
            raise ValueError(f"shape must be positive, got {self.shape}")
        if min(self.spectrum, self.row_scale_decades, self.col_scale_decades) < 0:
            raise ValueError("decade parameters must be >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def _orthonormal(rng: Rng, rows: int, cols: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal_matrix(rows, cols))
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs


def ensemble_member(spec: EnsembleSpec, index: int) -> np.ndarray:
    """``diag(r) U diag(sigma) V^T diag(c)`` with log-uniform sigma, r, c.

    Draw order from the member stream: U's Gaussian (m x k), V's (n x k),
    then the uniforms for sigma (k), r (m) and c (n).
    """
    m, n = spec.shape
    k = min(m, n)
    rng = Rng(derive_seed(spec.seed, index))
    U = _orthonormal(rng, m, k)
    V = _orthonormal(rng, n, k)
    sigma = 10.0 ** (-spec.spectrum * rng.uniform(k))
    r = 10.0 ** (-spec.row_scale_decades * rng.uniform(m))
    c = 10.0 ** (-spec.col_scale_decades * rng.uniform(n))
    return (r[:, None] * (U * sigma)) @ V.T * c[None, :]


def ensemble(spec: EnsembleSpec) -> list[np.ndarray]:
    return [ensemble_member(spec, i) for i in range(spec.count)]
