"""Numerical laboratory for the cofactor-driven obstacle problem.

Solves the Monge-Ampere Dirichlet problem on convex domains, builds the
linearized operator from the cofactor field, solves the associated obstacle
problem with independent methods, and measures the section geometry and
gradient regularity of the solutions.
"""

from .errors import (DegenerateInput, EmptyFreeBoundary, EmptyImage,
                     InsufficientData, InvalidInitialGuess, NoConvergence,
                     NonMonotoneStencil, PreconditionViolation, SchemaError,
                     SectionEscapes)
from .geometry import (AffineMap, ConvexDomain, Ellipsoid, Grid, ScalarField,
                       apply_affine, mvee, normalize_domain)
from .linma import (TensorField, apply_Lw, cofactor_field, discrete_hessian,
                    divergence_residual, ellipticity_check)
from .ma import (EllipticityBounds, MAProblem, MASolverParams, radial_ma_oracle,
                 solve_ma, verify_ma_residual)
from .obstacle import (DroppingParams, LCPSolution, LCPSolverParams,
                       ObstacleProblem, check_comparison, free_boundary,
                       perron_dropping, solve_obstacle_activeset,
                       solve_obstacle_psor)
from .regularity import (ExponentFit, GrowthReport, RescaledProblem,
                         alpha_from_theta, growth_check, holder_exponent,
                         rescale_problem, two_case_modulus)
from .sections import (IterationParams, NormalizationStep, Section,
                       SectionProbeResult, engulfing_check, extract_section,
                       fit_delta_recursion, harnack_quotient,
                       iterate_normalization, section_ball_probe)

__version__ = "0.1.0"
