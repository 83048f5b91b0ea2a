"""Optimal retirement investing under a dollar risk-capacity cap.

Solves the free-boundary dynamic programming problem of a retiree who may
never hold more than L dollars of the risky asset, provides the classic
closed-form comparison strategies, and verifies everything by Monte Carlo.
"""

from .closedform import (
    ClosedFormSolution,
    all_safety_value,
    closed_form_value,
    leverage_value,
    merton_value,
)
from .constrained import ConstrainedCoefficients, coefficients_for, v0, v_constrained
from .errors import (
    CandidateRejectedError,
    NonConvergenceError,
    SimulationError,
    SolverError,
    ValidationError,
)
from .freeboundary import (
    FreeBoundarySolution,
    PolicyFunction,
    SolverConfig,
    hjb_residual,
    optimal_policy,
    policy,
    solution_summary,
    solve_free_boundary,
    value_function,
    value_matching_residual,
)
from .gode import GSolution, IntegratorConfig, g_ode_rhs, integrate_G, invert_G, v_unconstrained
from .model import (
    DerivedConstants,
    ModelParams,
    check_assumption_a,
    crra_utility,
    derive_constants,
    example_params,
    j_from_v,
    load_params,
)
from .sim import SimConfig, SimResult, instantaneous_stats, policy_dominance_check, simulate_paths
from .specfun import gamma_fn, kummer_m_1, lower_incomplete_gamma, upper_incomplete_gamma

__version__ = "0.1.0"
