from .hpg import TwoTierPair, cross_tier_residual, hpg_tier_lift, make_two_tier_pair
from .metrics import psnr, ssim
from .select import DEFAULT_LAMBDA, QualityPrediction, predict_quality, select_algorithm
from .solvers import (
    ALGORITHMS,
    ReconResult,
    SolverConfig,
    admm_tv,
    fista_tv,
    gap_tv,
    preserves_nonneg,
    reconstruct,
    richardson_lucy,
    wiener,
)
from .tv import prox_tv, tv_norm

__all__ = [
    "ALGORITHMS", "DEFAULT_LAMBDA", "QualityPrediction", "ReconResult", "SolverConfig",
    "TwoTierPair", "admm_tv", "cross_tier_residual", "fista_tv", "gap_tv", "hpg_tier_lift",
    "make_two_tier_pair", "predict_quality", "preserves_nonneg", "prox_tv", "psnr",
    "reconstruct", "richardson_lucy", "select_algorithm", "ssim", "tv_norm", "wiener",
]
