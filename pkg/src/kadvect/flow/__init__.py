"""Stochastic characteristic flows: Brownian drivers, integrators, diagnostics."""

from .benchmarks import (additive_exact_solution_error, additive_noise_error,
                         geometric_strong_error, round_trip_sweep)
from .brownian import BrownianPaths, generate_paths, standard_normals, uniform_grid
from .integrate import (SCHEMES, FlowEnsemble, FlowFailure, flow_convergence_sweep,
                        integrate_backward_flow, integrate_flow, jacobian_moments)

__all__ = [
    "SCHEMES", "BrownianPaths", "FlowEnsemble", "FlowFailure", "additive_exact_solution_error",
    "additive_noise_error", "flow_convergence_sweep", "generate_paths",
    "geometric_strong_error", "integrate_backward_flow", "integrate_flow", "jacobian_moments",
    "round_trip_sweep", "standard_normals", "uniform_grid",
]
