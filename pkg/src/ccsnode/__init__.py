"""Tuned linear-multistep and Nesterov ODE solvers with CCS certification,
plus a small reverse-mode autodiff stack for training neural ODEs."""

__version__ = "0.1.0"

from .ccs import (  # noqa: F401
    CcsReport,
    RootCluster,
    ccs_report,
    check_consistency,
    check_zero_stability,
    example_methods,
    nesterov_method,
    poly_roots,
)
from .lmm import (  # noqa: F401
    LinearMultistepMethod,
    Polynomial,
    StepHistory,
    bootstrap,
    char_polynomials,
    eval_poly,
    lmm_step,
    make_method,
    poly_derivative,
)
from .solvers import (  # noqa: F401
    IvpProblem,
    SolverConfig,
    SolverTrace,
    estimate_lipschitz,
    integrate,
    nesterov_step,
)
