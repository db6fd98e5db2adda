"""Regime-switching stochastic LQ solver."""

from ._core import (
    AdjointSolution,
    FeedbackPolicy,
    ProblemSpec,
    RiccatiSolution,
    RslqError,
    build_policy,
    load_spec,
    occupation_probabilities,
    optimal_value,
    parse_spec,
    simulate_closed_loop,
    solve_adjoint_ode,
    solve_riccati_ode,
    solve_riccati_picard,
    validate,
)

__all__ = [
    "AdjointSolution",
    "FeedbackPolicy",
    "ProblemSpec",
    "RiccatiSolution",
    "RslqError",
    "build_policy",
    "load_spec",
    "occupation_probabilities",
    "optimal_value",
    "parse_spec",
    "simulate_closed_loop",
    "solve_adjoint_ode",
    "solve_riccati_ode",
    "solve_riccati_picard",
    "validate",
]
