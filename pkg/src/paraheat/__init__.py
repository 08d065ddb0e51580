"""Parametric diffusion surrogates and thermal diffusivity reconstruction.

The package solves the heat equation on the unit square or cube for a whole
family of spline-parametrized diffusivities at once (spectral Galerkin in the
parameters, P1 finite elements in space, semi-implicit Euler in time) and
inverts noisy boundary temperature measurements for the diffusivity with a
Tikhonov-regularized Gauss-Newton method running on the polynomial surrogate.
"""

__version__ = "0.1.0"

from .mesh_fem import (
    Mesh,
    ProblemSpec,
    assemble_boundary_load,
    assemble_interior_load,
    assemble_mass,
    assemble_stiffness,
    build_mesh,
    compute_eta,
    evaluate_fem,
    face_flux_problem,
    point_evaluation_matrix,
)
from .splines import (
    SplineBasis,
    bspline_value,
    build_partition,
    evaluate_diffusivity,
    sample_field_error,
    spline_stiffness_matrices,
)
from .spectral import (
    ParameterInterval,
    assemble_Y,
    assemble_Y_all,
    eval_basis_jacobian,
    eval_phi,
    legendre_eval,
    nnz_lambda,
    total_degree_indices,
)
from .stepper import (
    ParametricOperator,
    SolutionSnapshots,
    assemble_S,
    build_operator,
    crank_nicolson_solve,
    rhs_mean,
    semi_implicit_direct,
    semi_implicit_solve,
    stability_probe,
)
from .surrogate import (
    MeasurementSet,
    ParametricSurrogate,
    add_noise,
    boundary_grid,
    eval_JU,
    eval_U,
    extract_surrogate,
    truncate,
)
from .inverse import (
    ReconstructionResult,
    Regularizer,
    approximation_error,
    build_laplacian,
    gauss_newton,
    morozov_select,
)
