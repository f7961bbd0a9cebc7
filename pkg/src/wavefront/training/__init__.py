"""Optimizers, schedules, checkpoints, training loops and ranking metrics."""

from .checkpoint import (Checkpoint, CheckpointError, from_bytes, load_checkpoint, save_checkpoint,
                         to_bytes)
from .loops import (Model, ProbeResult, Trainer, build_model, contrastive_grads, embed_clips,
                    evaluate_classifier, fit_linear_probe, initial_checkpoint, linear_probe,
                    model_from_checkpoint, supervised_grads, train_contrastive, train_supervised)
from .metrics import average_precision, d_prime, metrics, norm_ppf, roc_auc
from .optim import OptimizerState, Schedule, adamw_step, decays_by_default, lr_at

__all__ = [
    "Checkpoint", "CheckpointError", "to_bytes", "from_bytes", "save_checkpoint", "load_checkpoint",
    "Model", "ProbeResult", "Trainer", "build_model", "model_from_checkpoint", "embed_clips",
    "supervised_grads", "contrastive_grads", "train_supervised", "train_contrastive",
    "initial_checkpoint", "evaluate_classifier", "fit_linear_probe", "linear_probe",
    "metrics", "roc_auc", "average_precision", "d_prime", "norm_ppf",
    "Schedule", "lr_at", "OptimizerState", "adamw_step", "decays_by_default",
]
