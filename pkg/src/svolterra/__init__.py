"""Stochastic Volterra equations driven by Brownian motion through the fBm kernel.

Modules: ``specialfn`` (Gauss hypergeometric function), ``fraccalc``
(grids, fractional integrals, Hölder estimates), ``kernel`` (K_H and its
cell-integrated matrices), ``simulate`` (Brownian/fBm paths and
ensembles), ``solver`` (Picard iteration), ``malliavin`` (directional
derivatives), ``acceptance`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import ConvergenceError, DomainError, PicardConvergenceError
from .fraccalc import (
    Grid,
    GridFunction,
    duality_residual,
    estimate_holder_exponent,
    frac_integral_left,
    frac_integral_right,
    holder_norm,
)
from .kernel import (
    FbmKernel,
    IdentityKernel,
    KernelMatrix,
    TabulatedKernel,
    bound_check,
    build_kernel_matrix,
    g_weight,
    kh_eval,
)
from .malliavin import (
    Direction,
    VariationKernel,
    cameron_martin_fd,
    consistency_report,
    derivative_linear_solve,
    initial_variation_kernel,
    parameter_variation,
    variation_series,
)
from .simulate import (
    BrownianPath,
    PathEnsemble,
    covariance_rh,
    ensemble_covariance,
    fbm_cholesky,
    fbm_from_kernel,
    fbm_kernel_ensemble,
    sample_brownian,
    stochastic_convolution,
    v_h,
)
from .solver import (
    PicardResult,
    SdeProblem,
    SolverConfig,
    initial_condition_sensitivity,
    picard_solve,
    solve_ensemble,
)
from .specialfn import HypergeometricParams, gamma_fn, hyp2f1, pochhammer
