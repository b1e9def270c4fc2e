"""Cosine noise schedule and the forward (noising) process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import StepRange


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    total_steps: int
    alpha_bar: np.ndarray
    scale: float = 1.0

    @property
    def S(self):
        return self.total_steps


def cosine_schedule(total_steps=1000, scale=1.0, offset=0.008, max_beta=0.999):
    S = int(total_steps)
    if S < 1:
        raise ValueError("schedule needs at least one step")
    s = np.arange(S + 1, dtype=np.float64)
    f = np.cos((s / S + offset) / (1 + offset) * math.pi * 0.5) ** 2
    ab = f / f[0]
    betas = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, max_beta)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alpha_bar.setflags(write=False)
    return NoiseSchedule(S, alpha_bar, float(scale))


def labels_to_state(labels, num_classes, scale=1.0):
    """One-hot encode integer labels and map {0, 1} to {-scale, +scale}."""
    onehot = np.eye(num_classes)[np.asarray(labels, dtype=np.int64)]
    return (2.0 * onehot - 1.0) * scale


def probs_to_state(p, scale=1.0):
    return (2.0 * p - 1.0) * scale


def q_sample(x0, step, noise, sched: NoiseSchedule):
    if not 0 <= step <= sched.total_steps:
        raise StepRange(f"step {step} outside [0, {sched.total_steps}]")
    ab = sched.alpha_bar[step]
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(noise)


def even_steps(total_steps, count):
    """``count`` distinct, strictly descending steps spread evenly over [1, total_steps]."""
    count = min(int(count), int(total_steps))
    steps = np.unique(np.round(np.linspace(1, total_steps, count)).astype(int))[::-1]
    return [int(s) for s in steps]
