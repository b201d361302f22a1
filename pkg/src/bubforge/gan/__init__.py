"""Feature-conditioned adversarial generator with explicit backprop."""

from .evaluate import ConditioningReport, default_sweep, evaluate_conditioning, patch_features
from .io import load_model, save_model
from .losses import (
    discriminator_loss,
    generator_loss,
    zero_sum_generator_loss,
)
from .model import GanConfig, GanModel
from .train import Adam, EpochStats, grad_check, tiny_config, train

__all__ = [
    "Adam",
    "ConditioningReport",
    "EpochStats",
    "GanConfig",
    "GanModel",
    "default_sweep",
    "discriminator_loss",
    "evaluate_conditioning",
    "generator_loss",
    "grad_check",
    "load_model",
    "patch_features",
    "save_model",
    "tiny_config",
    "train",
    "zero_sum_generator_loss",
]
