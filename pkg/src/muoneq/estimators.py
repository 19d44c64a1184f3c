"""scikit-learn style wrappers around the optimizer.

:class:`MuonEq` holds the hyperparameters (``get_params``/``set_params``) and
builds an :class:`~muoneq.optimizer.OptConfig`. :class:`MuonEqRegressor` fits a
multi-output linear model ``Y ~ X W^T`` by running the optimizer on the
least-squares objective.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from muoneq.equilibrate import DEFAULT_EPS, EquilConfig
from muoneq.newton_schulz import NS5_CONFIG, NsConfig
from muoneq.optimizer import OptConfig, OptState, ScheduleSpec, run, step
from muoneq.problems import LeastSquares


class MuonEq(BaseEstimator):
    """Hyperparameter container for the MuonEq update.

    ``schedules="theory"`` uses ``eta_t = lr t^{-3/4}`` and ``beta_t = 1 - t^{-1/2}``;
    ``"constant"`` uses ``lr`` and ``momentum`` unchanged. ``ns_steps=None``
    selects the exact polar factor.
    """

    def __init__(self, mode="R", epsilon=DEFAULT_EPS, nesterov=False, schedules="theory",
                 lr=1.0, momentum=0.95, weight_decay=0.0, ns_steps=5, scale="muon_default"):
        self.mode = mode
        self.epsilon = epsilon
        self.nesterov = nesterov
        self.schedules = schedules
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.ns_steps = ns_steps
        self.scale = scale

    def config(self) -> OptConfig:
        if self.schedules == "theory":
            lr = ScheduleSpec.power(self.lr, -0.75)
            beta = ScheduleSpec.theory_beta()
        elif self.schedules == "constant":
            lr = ScheduleSpec.constant(self.lr)
            beta = ScheduleSpec.constant(self.momentum)
        else:
            raise ValueError(f"schedules must be 'theory' or 'constant', got {self.schedules!r}")
        if self.ns_steps is None:
            ns = None
        elif self.ns_steps == 5:
            ns = NS5_CONFIG
        else:
            ns = NsConfig(NS5_CONFIG.polynomial, self.ns_steps, NS5_CONFIG.prescale)
        return OptConfig(
            equil=EquilConfig(self.mode, self.epsilon),
            ns=ns,
            nesterov=bool(self.nesterov),
            lr=lr,
            beta=beta,
            weight_decay=ScheduleSpec.constant(self.weight_decay),
            scale=self.scale,
        )

    def init_state(self, param) -> OptState:
        return OptState.init(param)

    def step(self, state: OptState, grad):
        return step(state, grad, self.config())


class MuonEqRegressor(RegressorMixin, BaseEstimator):
    """Multi-output linear regression trained with MuonEq on mini-batches.

    The weight matrix ``coef_`` has shape ``(n_targets, n_features)``. There is
    no intercept; center the data first if one is needed.
    """

    def __init__(self, mode="R", epsilon=DEFAULT_EPS, nesterov=False, schedules="theory",
                 lr=1.0, momentum=0.95, n_steps=500, batch_size=32, ns_steps=5,
                 scale="muon_default", random_state=0):
        self.mode = mode
        self.epsilon = epsilon
        self.nesterov = nesterov
        self.schedules = schedules
        self.lr = lr
        self.momentum = momentum
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.ns_steps = ns_steps
        self.scale = scale
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        Y = y.reshape(len(y), -1)
        self._single_output = y.ndim == 1
        opt = MuonEq(self.mode, self.epsilon, self.nesterov, self.schedules, self.lr,
                     self.momentum, 0.0, self.ns_steps, self.scale)
        problem = LeastSquares(
            inputs=X.T.copy(), targets=Y.T.copy(), x_star=np.zeros((Y.shape[1], X.shape[1])),
            batch_size=min(self.batch_size, X.shape[0]), noise=0.0,
        )
        init = [np.zeros((Y.shape[1], X.shape[1]))]
        trace = run(problem, opt.config(), self.n_steps, seed=self.random_state,
                    eval_interval=max(1, self.n_steps), init=init)
        self.coef_ = trace.final_params[0]
        self.loss_curve_ = list(trace.loss)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        out = X @ self.coef_.T
        return out[:, 0] if self._single_output else out
