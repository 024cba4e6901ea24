from .noise import NoiseModel, detect
from .ops import (
    KINDS,
    LAMBDA_FAMILIES,
    NONLINEAR_KINDS,
    Primitive,
    adjoint,
    apply,
    dot_test,
    lambda_lipschitz,
    lipschitz_bound,
    make_primitive,
)
from .psf import (
    ENCODERS,
    export_psf_stack,
    generate_depth_psfs,
    load_psf_stack,
    psf_cross_correlation,
    single_psf,
)

__all__ = [
    "KINDS", "LAMBDA_FAMILIES", "NONLINEAR_KINDS", "Primitive", "NoiseModel", "ENCODERS",
    "adjoint", "apply", "detect", "dot_test", "lambda_lipschitz", "lipschitz_bound",
    "make_primitive", "export_psf_stack", "generate_depth_psfs", "load_psf_stack",
    "psf_cross_correlation", "single_psf",
]
