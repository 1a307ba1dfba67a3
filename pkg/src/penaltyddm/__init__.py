"""Penalty domain-decomposition solvers for multibody contact in nonlinear elasticity."""

from .ddm import (
    ConvergenceHistory,
    DivergenceError,
    IterationConfig,
    Scheme,
    gamma_star,
    solve,
    solve_newton_like,
    solve_nonstationary,
    variant_config,
)
from .forms import Discretization, FormConstants, balanced_theta, estimate_constants
from .material import MaterialModel, omega_const, omega_rational, omega_zero, parse_omega
from .mesh import (
    MultiBodyProblem,
    generate_split_body,
    generate_stacked_blocks,
    load_problem,
    parse_problem,
    save_problem,
)
from .oracle import contact_audit, fd_check, solve_monolithic_penalty
from .penalty import DIRICHLET_DIRICHLET, NEUMANN_NEUMANN, ROBIN_ROBIN, CharFnPolicy, PenaltyConfig

__all__ = [
    "CharFnPolicy",
    "ConvergenceHistory",
    "DIRICHLET_DIRICHLET",
    "Discretization",
    "DivergenceError",
    "FormConstants",
    "IterationConfig",
    "MaterialModel",
    "MultiBodyProblem",
    "NEUMANN_NEUMANN",
    "PenaltyConfig",
    "ROBIN_ROBIN",
    "Scheme",
    "balanced_theta",
    "contact_audit",
    "estimate_constants",
    "fd_check",
    "gamma_star",
    "generate_split_body",
    "generate_stacked_blocks",
    "load_problem",
    "omega_const",
    "omega_rational",
    "omega_zero",
    "parse_omega",
    "parse_problem",
    "save_problem",
    "solve",
    "solve_monolithic_penalty",
    "solve_newton_like",
    "solve_nonstationary",
    "variant_config",
]
