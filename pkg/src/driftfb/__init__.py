"""Obstacle problems for critical nonlocal operators with drift.

The operator is ``A u = -L u + b . grad u`` with ``L`` an order-one
stable-like operator of angular density ``mu``.  The package discretizes
``A`` on uniform grids, solves ``min{A u, u - phi} = 0``, fits the growth
exponent of ``u - phi`` at free boundary points and compares it with
``1 + gamma(b . nu / chi(nu))``, ``gamma(t) = 1/2 + arctan(t)/pi``.
"""

__version__ = "0.1.0"

from .kernel import (ExponentPrediction, KernelSpec, chi, gamma_exponent, min_gamma,
                     normalization_constant, tilde_gamma)
from .operator import DiscreteOperator, Grid, MMatrixError, build_operator, consistency_report
from .profiles import (half_laplacian_power_oracle, power_multiplier, profile_exponent,
                       solve_exponent_root)
from .solver import (ProblemSpec, SolutionField, SolverDivergence, SolverParams,
                     a_priori_checks, residuals, solve)
from .free_boundary import (AnalysisError, FitWindow, FreeBoundaryPoint, analyze_free_boundary,
                            locate_free_boundary, nondegeneracy_check, regularity_budget)
from .barriers import BarrierDomain, barrier_sign_report, threshold_scan

__all__ = [
    "AnalysisError", "BarrierDomain", "DiscreteOperator", "ExponentPrediction", "FitWindow",
    "FreeBoundaryPoint", "Grid", "KernelSpec", "MMatrixError", "ProblemSpec", "SolutionField",
    "SolverDivergence", "SolverParams", "a_priori_checks", "analyze_free_boundary",
    "barrier_sign_report", "build_operator", "chi", "consistency_report", "gamma_exponent",
    "half_laplacian_power_oracle", "locate_free_boundary", "min_gamma", "nondegeneracy_check",
    "normalization_constant", "power_multiplier", "profile_exponent", "regularity_budget",
    "residuals", "solve", "solve_exponent_root", "threshold_scan", "tilde_gamma",
]
