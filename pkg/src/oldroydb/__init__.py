"""Finite-difference tools for a weakly compressible Oldroyd-B fluid.

The package splits the coupled velocity/density/stress system into three
linear subproblems with frozen coefficients, iterates them to a fixed point
over a time window, and instruments every run with the discrete energy,
transport and Gronwall-type estimates that make the construction checkable.
"""

from .errors import (ConfigError, DensityBandError, InvariantViolation,
                     LinearSolveError, NonConvergenceError, NonDirichletError,
                     OldroydError, SingularStressSystemError)
from .fields import (Grid, ScalarField, SymTensorField, VectorField,
                     div_tensor, divergence, grad_tensor, gradient, inner,
                     laplacian, mean, mean_zero_project, norm, norm_hminus1,
                     rate_tensors, save_snapshot, load_snapshot,
                     sym_components, viscous_operator)
from .rheology import (FluidParams, PressureLaw, density_band_check,
                       momentum_source, objective_coupling,
                       pressure_increment)
from .transport import (CharacteristicMap, DensityBoundReport,
                        DensityStepReport, StressBoundReport,
                        StressStepReport, check_density_bounds,
                        check_stress_bounds, step_density, step_stress,
                        trace)
from .velocity import (DissipationReport, EnergyBudgetReport,
                       RegularityReport, VelocityStepReport,
                       check_energy_budget, check_regularity_budget,
                       check_step_dissipation, run_velocity, step_velocity)
from .fixed_point import (ConvergenceHistory, IterTriple, MembershipReport,
                          ProbeReport, SweepDiagnostics, SystemResidual,
                          UniquenessReport, assemble_forcing,
                          check_membership, continuity_probe,
                          delta_threshold, fixed_point_residual, iterate,
                          picard_map, picard_sweep, suggest_budgets,
                          trajectory_distance, uniqueness_experiment)
from .mms import (StudyResult, all_studies, density_advection_study,
                  density_still_study, stress_relaxation_study,
                  taylor_vortex, velocity_spatial_study,
                  velocity_temporal_study)

__version__ = "0.1.0"
