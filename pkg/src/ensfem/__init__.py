"""Ensemble time stepping for groups of 2D linear parabolic PDEs.

Groups of simulations that differ in diffusion coefficient, source, boundary,
and initial data advance together: per time step the implicit diffusion term
uses the group-averaged coefficient so that a single SPD factorization serves
every member's right-hand side. A seeded Monte Carlo driver applies the same
scheme to PDEs with random diffusion fields.
"""

from .ensemble import (EnsembleMember, EnsembleProblem, EnsembleState, SolveStats,
                       TimeGrid, ensemble_mean_coeff, ensemble_solve, ensemble_step,
                       independent_solve, trajectory_errors)
from .fem import (FeSpace, apply_dirichlet, assemble_load, assemble_mass,
                  assemble_stiffness, build_space, constant_field, error_h1_semi,
                  error_l2, l2_project, zero_field)
from .mesh import (BoundaryTag, Mesh, dump_mesh, mesh_size, refine_uniform,
                   uniform_triangulation)
from .sparse import (NotSpdError, add_scaled, counters, matvec, reset_counters,
                     solve_block, spd_factorize)
from .stability import (SamplingGrid, StabilityReport, check_condition,
                        estimate_bounds, partition_ensemble)
from .stochastic import (EmcConfig, EmcResult, RandomFieldSpec, SampleDraw,
                         StabilityError, draw_samples, kl_eigenvalues, mc_rate_study,
                         qoi_integral, run_emc, sample_coefficient)

__version__ = "0.1.0"
