"""Numerical laboratory for nonlocal double-phase equations with VMO kernel coefficients."""

from .functionals import (
    DualPairField, combined_tail, composed_vmo_modulus, dual_pair_field, gagliardo_seminorm, mu_measure,
    nonlocal_tail, refined_tail, vmo_modulus, wb_weight, xi0,
)
from .model import (
    ExteriorData, GridFunction, KernelPair, ProblemSpec, Region, SpecError, bracket_power, check_kernel,
    validate_spec,
)
from .operators import build_assembly, residual
from .quadrature import exterior_radial_integral, pair_integral, pv_point_eval
from .regularity import (
    HolderFit, InequalityVerdict, boundedness_check, caccioppoli_check, holder_exponent_fit, reverse_holder_check,
    self_improving_check, sobolev_poincare_check, zoom_normalize, zoom_rescale_M,
)
from .registry import make_field, make_kernel
from .solver import SolveConfig, SolveReport, solve_averaged_comparison, solve_dirichlet, solve_frozen

__version__ = "0.1.0"
