"""Conditional diffusion model for per-frame action labels."""

from .losses import ABLATION, LossConfig, loss
from .model import DenoiserParams, denoise, init_params, load_params, save_params
from .schedule import NoiseSchedule, cosine_schedule, even_steps, labels_to_state, q_sample
from .training import TrainHyper, frame_accuracy, infer, infer_probs, train, write_log

__all__ = [
    "ABLATION", "DenoiserParams", "LossConfig", "NoiseSchedule", "TrainHyper",
    "cosine_schedule", "denoise", "even_steps", "frame_accuracy", "infer", "infer_probs",
    "init_params", "labels_to_state", "load_params", "loss", "q_sample", "save_params",
    "train", "write_log",
]
