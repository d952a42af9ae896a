"""Desk-scale solvers: simplex LP, branch-and-bound MILP, Frank-Wolfe QP,
activation-pattern solvers for complementarity models, and the embedded
augmented-Lagrangian solver."""

from .result import NumericalError, SolveResult, SolverError, Status, TraceRecord
from .simplex import lp_solve

__all__ = [
    "NumericalError",
    "SolveResult",
    "SolverError",
    "Status",
    "TraceRecord",
    "lp_solve",
]
