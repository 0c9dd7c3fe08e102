"""Services for the dehazing toolkit."""

from .losses import LossResult, compute_loss
from .metrics import evaluate_set, psnr, ssim_eval
from .trainer import Trainer, TrainingAborted, alpha_sweep, train

__all__ = [
    "LossResult",
    "Trainer",
    "TrainingAborted",
    "alpha_sweep",
    "compute_loss",
    "evaluate_set",
    "psnr",
    "ssim_eval",
    "train",
]
