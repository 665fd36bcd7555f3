"""Constrained group lasso solvers and optimal-set analysis for two-layer
(gated) ReLU networks.

The package is organized around a single problem container
(:class:`~relu_optset.core.CglProblem`): :mod:`~relu_optset.reformulation`
builds such problems from raw data by enumerating activation patterns,
:mod:`~relu_optset.solver` produces certified primal/dual solutions,
:mod:`~relu_optset.optimal_set` turns one solution into a description of all
of them, and :mod:`~relu_optset.pruning` / :mod:`~relu_optset.sensitivity`
compute minimal models and differential sensitivities.
"""

from .core import (
    BlockPartition,
    CapabilityError,
    CertificateError,
    CglError,
    CglProblem,
    DualCertificate,
    KktReport,
    SolverError,
    active_set,
    kkt_report,
    objective,
    penalty_sum,
    support_set,
)
from .solver import (
    SolveResult,
    SolverOptions,
    objective_l2,
    prox_block,
    solve,
    solve_l2,
    solve_or_raise,
)

__all__ = [
    "BlockPartition",
    "CapabilityError",
    "CertificateError",
    "CglError",
    "CglProblem",
    "DualCertificate",
    "KktReport",
    "SolveResult",
    "SolverError",
    "SolverOptions",
    "active_set",
    "kkt_report",
    "objective",
    "objective_l2",
    "penalty_sum",
    "prox_block",
    "solve",
    "solve_l2",
    "solve_or_raise",
    "support_set",
]

__version__ = "0.1.0"
