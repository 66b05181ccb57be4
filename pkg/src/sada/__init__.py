"""Stability-guided adaptive acceleration for ODE-based diffusion sampling.

The hot kernels come from a compiled extension when it is importable and
from a numpy implementation otherwise; ``sada.BACKEND`` names the one in use.
"""
from ._backend import BACKEND
from .controller import (
    PolicyParams,
    SadaController,
    StabilityReport,
    eq5_baseline_criterion,
    evaluate_criterion,
    finite_difference_approximate,
    multistep_update,
    sada_run,
    stepwise_approximate,
)
from .denoiser import (
    EvalCounter,
    GaussianMixture,
    GMMDenoiser,
    LinearFieldDenoiser,
    TokenDenoiser,
    TokenModel,
    gmm_epsilon,
    token_model_forward,
)
from .numerics import (
    LagrangeBuffer,
    RingBuffer3,
    adams_moulton_estimate,
    backward_diff,
    backward_extrapolate,
    extrapolation_weights,
    lagrange_interpolate,
)
from .report import PSNR_IDENTICAL, RunReport, compute_psnr, relative_l2
from .schedule import NoiseSchedule, TimestepGrid, expected_mean_check
from .solver import SadaMode, SamplerConfig, Solver, dpmpp2m_step, euler_step, run_baseline
from .tokencache import LayerCache, TokenCachePlan, tokenwise_execute, tokenwise_plan

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EvalCounter",
    "GMMDenoiser",
    "GaussianMixture",
    "LagrangeBuffer",
    "LayerCache",
    "LinearFieldDenoiser",
    "NoiseSchedule",
    "PSNR_IDENTICAL",
    "PolicyParams",
    "RingBuffer3",
    "RunReport",
    "SadaController",
    "SadaMode",
    "SamplerConfig",
    "Solver",
    "StabilityReport",
    "TimestepGrid",
    "TokenCachePlan",
    "TokenDenoiser",
    "TokenModel",
    "adams_moulton_estimate",
    "backward_diff",
    "backward_extrapolate",
    "compute_psnr",
    "dpmpp2m_step",
    "eq5_baseline_criterion",
    "euler_step",
    "evaluate_criterion",
    "expected_mean_check",
    "extrapolation_weights",
    "finite_difference_approximate",
    "gmm_epsilon",
    "lagrange_interpolate",
    "multistep_update",
    "relative_l2",
    "run_baseline",
    "sada_run",
    "stepwise_approximate",
    "token_model_forward",
    "tokenwise_execute",
    "tokenwise_plan",
]
