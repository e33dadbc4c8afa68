"""Non-symmetric coupling of a vertex-centered finite volume method with a
Galerkin boundary element method for 2-D interior convection-diffusion-reaction
problems radiating into an exterior Laplace field."""

from .bem import (BoundaryLoop, assemble_K, assemble_M, assemble_V,
                  eval_representation, eval_trace_with_angle,
                  fundamental_solution)
from .coupling import (CoupledSystem, DiscreteSolution, SolverError,
                       assemble_P_row, assemble_ainf_variant, assemble_coupled,
                       box_balance_residual, check_P_identity, solve)
from .fvm import (UpwindScheme, assemble_fvm, assemble_fvm_upwind,
                  assemble_rhs_interior, assemble_trace_coupling,
                  build_upwind_scheme, interp_dual, phi_full, phi_steered)
from .mesh import (BoundaryPartition, DomainDescriptor, DualMesh, MeshError,
                   PrimalMesh, build_dual_mesh, build_structured_mesh,
                   classify_boundary, lshape_domain, mesh_hierarchy,
                   rectangle_domain, refine_uniform, square_domain,
                   write_mesh_listing)
from .model import (CoefficientField, ConfigError, EllipticityWarning,
                    ExactSolutionPair, GammaConditionError, JumpData,
                    ModelError, ProblemSpec, ScalarField, SourceField,
                    VelocityField, builtin_problem, gamma,
                    load_problem_config, min_eigenvalue_report, select_beta,
                    validate_gamma)
from .postprocess import (ErrorReport, FieldSamples, LevelRecord, eoc,
                          error_h1_semi, error_l2, error_vnorm,
                          eval_exterior_grid, eval_exterior_points,
                          oscillation_nodes, write_field_csv,
                          write_report_csv)

__version__ = "0.1.0"
