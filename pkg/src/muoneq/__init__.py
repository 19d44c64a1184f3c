"""MuonEq: row/column equilibration before Newton-Schulz orthogonalized momentum,
with executable checks of the spectral and convergence quantities around it."""

__version__ = "0.1.0"

from muoneq.equilibrate import (
    EquilConfig,
    EquilMode,
    EquilOutput,
    RowColumnEqualizer,
    diag_pre,
    scaler_bounds_report,
)
from muoneq.estimators import MuonEq, MuonEqRegressor
from muoneq.exceptions import DomainError, FormatError, NumericalError
from muoneq.linalg import norms, polar_factor, row_col_sq_norms, svd
from muoneq.newton_schulz import (
    NS5_CONFIG,
    PRACTICAL,
    TAYLOR,
    NewtonSchulzOrthogonalizer,
    NsConfig,
    NsPolynomial,
    ns5,
    ns_run,
    validate_polynomial,
)
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
from muoneq.problems import EnsembleSpec, ensemble, evaluate, grad_check, make_problem
from muoneq.rng import Rng

__all__ = [
    "DomainError", "EnsembleSpec", "EquilConfig", "EquilMode", "EquilOutput", "FormatError",
    "MuonEq", "MuonEqRegressor", "NS5_CONFIG", "NewtonSchulzOrthogonalizer", "NsConfig",
    "NsPolynomial", "NumericalError", "OptConfig", "OptState", "PRACTICAL", "Rng",
    "RowColumnEqualizer", "ScheduleSpec", "TAYLOR", "diag_pre", "ensemble", "evaluate",
    "grad_check", "make_problem", "norms", "ns5", "ns_run", "polar_factor", "row_col_sq_norms",
    "run", "scaler_bounds_report", "schedule_eval", "step", "svd", "theory_config",
    "validate_polynomial", "wd_envelope_check",
]
