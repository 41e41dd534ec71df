"""Desk-scale machine unlearning: gated gradient ascent, baselines and MIA evaluation."""

from .nn import Batch, ModelParams, forward, grad_mean_loss, init_mlp
from .unlearn import UnlearnConfig, combined_gradient, combined_loss, default_alpha, run_nabla_tau

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ModelParams",
    "UnlearnConfig",
    "combined_gradient",
    "combined_loss",
    "default_alpha",
    "forward",
    "grad_mean_loss",
    "init_mlp",
    "run_nabla_tau",
]
