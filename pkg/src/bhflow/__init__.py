"""Measure flows in log-density (Bayes-Hilbert) coordinates.

A prescribed path of log-densities determines, through a weighted zero-flux
elliptic solve at each time, the unique gradient velocity field of minimum
kinetic energy realizing it in the continuity equation.  The package
evaluates this canonical transport and its induced quadratic form, reduces
both to finite coefficient subspaces, and solves the variational inverse
problem of recovering a coefficient path from indirect time-dependent
feature observations.
"""

from .bhspace import (AdmissibleBounds, CoordState, clr, cov_under, exp_normalize,
                      log_density_rate, mean_under)
from .grid import FaceField, Grid
from .inverse import (InverseProblem, OptimizerSettings, RecoveryReport, gradient,
                      make_synthetic, noise_scaling_study, objective,
                      recovery_errors, solve_inverse)
from .neumann import (NeumannSolution, SolverError, WeightedOperator, assemble,
                      solve, solve_linearized)
from .observe import (ObservabilityReport, ObservationModel, StabilityRecord,
                      fourier_features, monomial_features, observation_jacobian,
                      observe, stability_check)
from .particles import Ensemble, advect, density_cdf, ks_distance, sample_initial
from .reduction import (Basis, CoefficientPath, KineticTensor, basis_from_array,
                        fisher_rao_path, fourier_basis, kinetic_tensor,
                        legendre_basis, polynomial_path, reduced_flow_match_loss,
                        reduced_velocity, state_of)
from .transport import (TransportEval, continuity_residual, flow_match_loss,
                        transport_action, transport_form,
                        transport_form_derivative, transport_map)

__version__ = "0.1.0"

__all__ = [
    "AdmissibleBounds", "Basis", "CoefficientPath", "CoordState", "Ensemble",
    "FaceField", "Grid", "InverseProblem", "KineticTensor", "NeumannSolution",
    "ObservabilityReport", "ObservationModel", "OptimizerSettings",
    "RecoveryReport", "SolverError", "StabilityRecord", "TransportEval",
    "WeightedOperator", "advect", "assemble", "basis_from_array", "clr",
    "continuity_residual", "cov_under", "density_cdf", "exp_normalize",
    "fisher_rao_path", "flow_match_loss", "fourier_basis", "fourier_features",
    "gradient", "kinetic_tensor", "ks_distance", "legendre_basis",
    "log_density_rate", "make_synthetic", "mean_under", "monomial_features",
    "noise_scaling_study", "objective", "observation_jacobian", "observe",
    "polynomial_path", "recovery_errors", "reduced_flow_match_loss",
    "reduced_velocity", "sample_initial", "solve", "solve_inverse",
    "solve_linearized", "stability_check", "state_of", "transport_action",
    "transport_form", "transport_form_derivative", "transport_map",
]
