"""The MuonEq step: momentum, optional Nesterov lookahead, equilibration,
orthogonalization and a scaled update with decoupled weight decay.

One step on a matrix parameter ``X_t`` with stochastic gradient ``G_t``::

    M_t     = beta_t M_{t-1} + (1 - beta_t) G_t
    M~_t    = beta_{t+1} M_t + (1 - beta_{t+1}) G_t   (Nesterov) or M_t
    M^_t    = diag_pre(M~_t)
    O_t     = ns_run(M^_t)            (or the exact polar factor)
    X_{t+1} = (1 - lambda_t eta_t) X_t - a eta_t O_t

There is no bias correction of the momentum buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from muoneq.equilibrate import EquilConfig, EquilOutput, diag_pre
from muoneq.linalg import as_matrix, polar_factor, spectral_norm
from muoneq.newton_schulz import NS5_CONFIG, NsConfig, ns_run
from muoneq.problems import evaluate, sample_batch
from muoneq.rng import Rng

SCHEDULE_KINDS = (
    "constant",
    "power",
    "theory_lr",
    "theory_beta",
    "theory_wd",
    "warmup_cosine",
)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "ScheduleSpec":
        if value < 0:
            raise ValueError("constant schedule value must be >= 0")
        return cls("constant", (float(value),))

    @classmethod
    def power(cls, coef: float, exponent: float) -> "ScheduleSpec":
        if coef < 0:
            raise ValueError("power schedule coefficient must be >= 0")
        return cls("power", (float(coef), float(exponent)))

    @classmethod
    def theory_lr(cls) -> "ScheduleSpec":
        return cls("theory_lr")

    @classmethod
    def theory_beta(cls) -> "ScheduleSpec":
        return cls("theory_beta")

    @classmethod
    def theory_wd(cls, rho, x1_norm=None, n_dim=None, a_scale=None, eps_ns=0.0):
        """``lambda_t = rho t^{-1/4} / (x1_norm + 4 a (1 + eps_ns) sqrt(n_dim))``.

        Fields left as None are bound per parameter when a run starts.
        """
        if rho < 0:
            raise ValueError("rho must be >= 0")
        return cls("theory_wd", (float(rho), x1_norm, n_dim, a_scale, float(eps_ns)))

    @classmethod
    def warmup_cosine(cls, peak: float, warmup_steps: int, total_steps: int) -> "ScheduleSpec":
        if peak < 0 or warmup_steps < 0 or total_steps <= warmup_steps:
            raise ValueError("need peak >= 0 and 0 <= warmup_steps < total_steps")
        return cls("warmup_cosine", (float(peak), int(warmup_steps), int(total_steps)))

    @property
    def is_bound(self) -> bool:
        return self.kind != "theory_wd" or None not in self.params[1:4]

    def bind(self, x1_norm: float, n_dim: int, a_scale: float) -> "ScheduleSpec":
        if self.kind != "theory_wd":
            return self
        rho, x1, nd, a, eps_ns = self.params
        return ScheduleSpec(
            "theory_wd",
            (
                rho,
                float(x1_norm) if x1 is None else x1,
                int(n_dim) if nd is None else nd,
                float(a_scale) if a is None else a,
                eps_ns,
            ),
        )


def schedule_eval(spec: ScheduleSpec, t: int) -> float:
    if t < 1:
        raise ValueError(f"schedules are defined for t >= 1, got t = {t}")
    kind, p = spec.kind, spec.params
    if kind == "constant":
        return p[0]
    if kind == "power":
        return p[0] * float(t) ** p[1]
    if kind == "theory_lr":
        return float(t) ** -0.75
    if kind == "theory_beta":
        return 1.0 - float(t) ** -0.5
    if kind == "theory_wd":
        if not spec.is_bound:
            raise ValueError("theory_wd schedule evaluated before binding x1_norm, n_dim, a_scale")
        rho, x1, nd, a, eps_ns = p
        if rho == 0.0:
            return 0.0
        return rho * float(t) ** -0.25 / (x1 + 4.0 * a * (1.0 + eps_ns) * math.sqrt(nd))
    peak, warm, total = p
    if t <= warm:
        return peak * t / warm
    if t >= total:
        return 0.0
    return peak * 0.5 * (1.0 + math.cos(math.pi * (t - warm) / (total - warm)))


def muon_scale(shape) -> float:
    return 0.2 * math.sqrt(max(shape))


@dataclass(frozen=True)
class OptConfig:
    """``ns=None`` selects the exact SVD polar factor instead of Newton-Schulz.

    ``scale`` is ``"muon_default"`` (``a = 0.2 sqrt(max(m, n))`` per matrix) or a
    positive float.
    """

    equil: EquilConfig = field(default_factory=EquilConfig)
    ns: NsConfig | None = NS5_CONFIG
    nesterov: bool = False
    lr: ScheduleSpec = field(default_factory=ScheduleSpec.theory_lr)
    beta: ScheduleSpec = field(default_factory=ScheduleSpec.theory_beta)
    weight_decay: ScheduleSpec = field(default_factory=lambda: ScheduleSpec.constant(0.0))
    scale: str | float = "muon_default"

    def __post_init__(self):
        if self.scale != "muon_default" and not float(self.scale) > 0:
            raise ValueError(f"scale must be 'muon_default' or a positive number, got {self.scale!r}")

    def scale_for(self, shape) -> float:
        return muon_scale(shape) if self.scale == "muon_default" else float(self.scale)


def theory_config(mode="R", epsilon=0.0, rho=0.0, eps_ns=0.0, ns=NS5_CONFIG, nesterov=False):
    """Schedules used by the convergence results: ``eta_t = t^{-3/4}``, ``beta_t = 1 - t^{-1/2}``."""
    return OptConfig(
        equil=EquilConfig(mode, epsilon),
        ns=ns,
        nesterov=nesterov,
        lr=ScheduleSpec.theory_lr(),
        beta=ScheduleSpec.theory_beta(),
        weight_decay=ScheduleSpec.theory_wd(rho, eps_ns=eps_ns) if rho > 0 else ScheduleSpec.constant(0.0),
    )


@dataclass
class OptState:
    param: np.ndarray
    momentum: np.ndarray
    step_count: int = 1

    @classmethod
    def init(cls, param) -> "OptState":
        param = as_matrix(param, "param").copy()
        return cls(param, np.zeros_like(param), 1)


@dataclass
class StepReport:
    grad_norm: float
    momentum_norm: float
    update_norm: float
    o_norms: dict
    lr: float
    beta: float
    weight_decay: float
    scale: float
    param_norm: float
    equil_out: EquilOutput | None = None


def orthogonalize(A: np.ndarray, ns: NsConfig | None) -> np.ndarray:
    return polar_factor(A) if ns is None else ns_run(A, ns)[0]


def step(state: OptState, grad, cfg: OptConfig, keep_equil: bool = False):
    """One MuonEq step; returns ``(new_state, report)`` without mutating ``state``."""
    G = as_matrix(grad, "grad")
    if G.shape != state.param.shape:
        raise ValueError(f"gradient shape {G.shape} does not match parameter {state.param.shape}")
    t = state.step_count
    if t < 1:
        raise ValueError(f"step_count must be >= 1, got {t}")
    beta = schedule_eval(cfg.beta, t)
    M = beta * state.momentum + (1.0 - beta) * G
    if cfg.nesterov:
        beta_next = schedule_eval(cfg.beta, t + 1)
        M_look = beta_next * M + (1.0 - beta_next) * G
    else:
        M_look = M
    eq = diag_pre(M_look, cfg.equil)
    O = orthogonalize(eq.result, cfg.ns)
    eta = schedule_eval(cfg.lr, t)
    wd_spec = cfg.weight_decay
    a = cfg.scale_for(G.shape)
    if not wd_spec.is_bound:
        raise ValueError("bind the theory_wd schedule (ScheduleSpec.bind) before stepping")
    lam = schedule_eval(wd_spec, t)
    X = state.param
    X_new = (1.0 - lam * eta) * X - a * eta * O
    report = StepReport(
        grad_norm=float(np.linalg.norm(G)),
        momentum_norm=float(np.linalg.norm(M)),
        update_norm=float(np.linalg.norm(X_new - X)),
        o_norms={"frobenius": float(np.linalg.norm(O)), "spectral": spectral_norm(O)},
        lr=eta,
        beta=beta,
        weight_decay=lam,
        scale=a,
        param_norm=float(np.linalg.norm(X)),
        equil_out=eq if keep_equil else None,
    )
    return OptState(X_new, M, t + 1), report


@dataclass
class Trace:
    """Per-step record of a run. ``matrix_stats[p]`` holds per-step numbers for the
    ``p``-th matrix parameter (its index into the parameter list is ``param_index``)."""

    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    full_loss: list[float] = field(default_factory=list)
    full_grad_norm: list[float] = field(default_factory=list)
    matrix_stats: list[dict] = field(default_factory=list)
    snapshots: list[list[np.ndarray]] | None = None
    final_params: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.loss)


def _grad_norm(grads) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def run(problem, cfg: OptConfig, steps: int, seed: int = 0, eval_interval: int = 1,
        record_params: bool = False, init=None) -> Trace:
    """Apply :func:`step` ``steps`` times with mini-batch gradients.

    Matrix parameters use MuonEq; 1-D parameters take plain gradient steps
    ``x -= eta_t g``. The full-data loss and gradient norm are recorded at
    ``X_t`` every ``eval_interval`` steps (and at the last step).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if eval_interval < 1:
        raise ValueError("eval_interval must be >= 1")
    params = [np.array(p, dtype=np.float64) for p in (init if init is not None else problem.init)]
    rng = Rng(seed)
    trace = Trace(snapshots=[] if record_params else None)
    states: dict[int, tuple[OptState, OptConfig]] = {}
    for i, p in enumerate(params):
        if p.ndim == 2:
            a = cfg.scale_for(p.shape)
            wd = cfg.weight_decay.bind(np.linalg.norm(p), min(p.shape), a)
            states[i] = (OptState.init(p), replace(cfg, weight_decay=wd))
            trace.matrix_stats.append({
                "param_index": i, "shape": p.shape, "scale": a, "weight_decay_spec": wd,
                "weight_decay": [], "param_norm": [], "step_norm": [], "o_frobenius": [],
            })
    stats_by_index = {s["param_index"]: s for s in trace.matrix_stats}

    for t in range(1, steps + 1):
        if record_params:
            trace.snapshots.append([p.copy() for p in params])
        if (t - 1) % eval_interval == 0 or t == steps:
            full = evaluate(problem, params)
            trace.eval_steps.append(t)
            trace.full_loss.append(full["loss"])
            trace.full_grad_norm.append(_grad_norm(full["grad"]))
        out = evaluate(problem, params, sample_batch(problem, rng))
        trace.loss.append(out["loss"])
        trace.grad_norm.append(_grad_norm(out["grad"]))
        trace.lr.append(schedule_eval(cfg.lr, t))
        trace.beta.append(schedule_eval(cfg.beta, t))
        for i, g in enumerate(out["grad"]):
            if i in states:
                st, pcfg = states[i]
                st, rep = step(st, g, pcfg)
                states[i] = (st, pcfg)
                params[i] = st.param
                s = stats_by_index[i]
                s["weight_decay"].append(rep.weight_decay)
                s["param_norm"].append(rep.param_norm)
                s["step_norm"].append(rep.update_norm)
                s["o_frobenius"].append(rep.o_norms["frobenius"])
            else:
                params[i] = params[i] - schedule_eval(cfg.lr, t) * g
    trace.final_params = params
    return trace


def wd_envelope_check(trace: Trace, cfg: OptConfig, rho: float, eps_ns: float, slack: float = 1e-9):
    """Check the weight-decay envelope along a recorded run.

    At every step and for every matrix parameter: ``lambda_t`` stays within the
    theory schedule ``rho t^{-1/4} / (||X_1||_F + 4 a (1 + eps_ns) sqrt(n))``,
    ``lambda_t ||X_t||_F <= rho`` and
    ``||X_{t+1} - X_t||_F <= (a (1 + eps_ns) sqrt(n) + rho) eta_t``,
    with ``n = min(rows, cols)``.
    """
    if cfg.lr.kind != "theory_lr":
        raise ValueError("envelope check needs a run under the theory learning-rate schedule")
    wd = cfg.weight_decay
    if not (wd.kind == "theory_wd" or (wd.kind == "constant" and wd.params[0] == 0.0)):
        raise ValueError("envelope check needs theory_wd (or zero) weight decay")
    if not trace.matrix_stats:
        raise ValueError("trace has no matrix parameters")
    ok = True
    max_lambda_x = 0.0
    max_step_ratio = 0.0
    max_lambda_ratio = 0.0
    for s in trace.matrix_stats:
        a = s["scale"]
        x1 = s["param_norm"][0]
        nd = min(s["shape"])
        cap0 = rho / (x1 + 4.0 * a * (1.0 + eps_ns) * math.sqrt(nd)) if rho > 0 else 0.0
        step_coef = a * (1.0 + eps_ns) * math.sqrt(nd) + rho
        for t, (lam, xn, dn) in enumerate(
            zip(s["weight_decay"], s["param_norm"], s["step_norm"]), start=1
        ):
            eta = trace.lr[t - 1]
            cap = cap0 * t**-0.25
            lx = lam * xn
            max_lambda_x = max(max_lambda_x, lx)
            if cap > 0:
                max_lambda_ratio = max(max_lambda_ratio, lam / cap)
            elif lam > 0:
                max_lambda_ratio = math.inf
            max_step_ratio = max(max_step_ratio, dn / (step_coef * eta))
            if lam > cap + slack or lx > rho + slack or dn > step_coef * eta + slack:
                ok = False
    return {
        "ok": ok,
        "max_lambda_x": max_lambda_x,
        "max_step_ratio": max_step_ratio,
        "max_lambda_ratio": max_lambda_ratio,
    }
