"""Progressive autoregressive diffusion sampling on synthetic latent sequences."""

from .denoisers import AnalyticDenoiser, GaussianProcessPrior, ToyDenoiser, ToyDenoiserParams, build_ar1_prior
from .diffusion import ddim_step, forward_diffuse, mse_eps_loss, predict_x0
from .schedule import (
    FrameNoiseVector,
    SamplingSchedule,
    VarianceSchedule,
    make_linear_sampling_schedule,
    make_variance_schedule,
    output_levels,
    perturb_training_levels,
    progressive_input_levels,
)
from .window import GenerationConfig, generate

__all__ = [
    "AnalyticDenoiser",
    "FrameNoiseVector",
    "GaussianProcessPrior",
    "GenerationConfig",
    "SamplingSchedule",
    "ToyDenoiser",
    "ToyDenoiserParams",
    "VarianceSchedule",
    "build_ar1_prior",
    "ddim_step",
    "forward_diffuse",
    "generate",
    "make_linear_sampling_schedule",
    "make_variance_schedule",
    "mse_eps_loss",
    "output_levels",
    "perturb_training_levels",
    "predict_x0",
    "progressive_input_levels",
]
