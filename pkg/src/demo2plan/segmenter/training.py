"""SGD-with-momentum training of the denoiser and step-skipping inference."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import make_rng
from ..errors import DivergedError, ShapeError, StepOrder, StepRange
from .losses import LossConfig, loss
from .model import DenoiserParams, backward, forward, init_params
from .schedule import NoiseSchedule, labels_to_state, probs_to_state, q_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    momentum: float = 0.9
    layers: int = 8
    width: int = 32
    clip_norm: float = 0.0  # 0 disables global-norm clipping


def train(dataset, cfg: LossConfig, sched: NoiseSchedule, hyper: TrainHyper, init=None, log_rows=None):
    """Train on ``dataset`` and return the final parameters.

    One step = one episode at one uniformly drawn diffusion step. If
    ``log_rows`` is a list, (step, ce, ba, ts, total) tuples are appended.
    """
    if not dataset:
        raise ValueError("training needs at least one episode")
    C = dataset[0].num_classes
    D = dataset[0].feature_dim
    data = []
    for ep in dataset:
        y = ep.labels()
        if y is None:
            raise ValueError(f"episode {ep.id} lacks ground-truth labels")
        data.append((ep.feature_matrix(), y))
    params = init if init is not None else init_params(
        C, D, hyper.layers, hyper.width, sched.total_steps, seed=hyper.seed
    )
    params = params.copy()
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    rng = make_rng(hyper.seed, "train")
    step = 0
    for epoch in range(hyper.epochs):
        for i in rng.permutation(len(data)):
            cond, y = data[i]
            s = int(rng.integers(1, sched.total_steps + 1))
            noise = rng.standard_normal((len(y), C))
            x_s = q_sample(labels_to_state(y, C, sched.scale), s, noise, sched)
            prob, cache = forward(params, x_s, s, cond)
            total, parts, g_prob = loss(prob, y, cfg, with_grad=True)
            if not math.isfinite(total):
                raise DivergedError(step)
            grads = backward(params, cache, g_prob)
            if hyper.clip_norm > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > hyper.clip_norm:
                    grads = {k: g * (hyper.clip_norm / norm) for k, g in grads.items()}
            for k in params.names():
                v = velocity[k]
                v *= hyper.momentum
                v -= hyper.lr * grads[k]
                params.tensors[k] += v
            if log_rows is not None:
                log_rows.append((step, parts["ce"], parts["ba"], parts["ts"], total))
            step += 1
        log.debug("epoch %d done, last total loss %.4f", epoch, total)
    for k in params.names():
        if not np.all(np.isfinite(params.tensors[k])):
            raise DivergedError(step)
    return params


def write_log(rows, path):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "ce", "ba", "ts", "total"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def infer_probs(cond, params: DenoiserParams, sched: NoiseSchedule, steps, seed):
    """Deterministic DDIM-style reverse process; returns the last clean-label prediction."""
    steps = [int(s) for s in steps]
    if not steps:
        raise StepOrder("need at least one inference step")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise StepOrder("inference steps must be strictly descending")
    if steps[0] > sched.total_steps or steps[-1] < 1:
        raise StepRange(f"inference steps must lie in [1, {sched.total_steps}]")
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim != 2 or cond.shape[1] != params.feature_dim:
        raise ShapeError(f"conditioning must be T x {params.feature_dim}")
    T, C = cond.shape[0], params.num_classes
    x = make_rng(seed, "infer").standard_normal((T, C))
    ab = sched.alpha_bar
    prob = None
    for i, s in enumerate(steps):
        s_next = steps[i + 1] if i + 1 < len(steps) else 0
        prob, _ = forward(params, x, s, cond)
        x0 = probs_to_state(prob, sched.scale)
        eps = (x - math.sqrt(ab[s]) * x0) / math.sqrt(1.0 - ab[s])
        x = math.sqrt(ab[s_next]) * x0 + math.sqrt(1.0 - ab[s_next]) * eps
    return prob


def infer(cond, params, sched, steps, seed):
    """Per-frame class labels."""
    return infer_probs(cond, params, sched, steps, seed).argmax(axis=1)


def frame_accuracy(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"timelines differ in length: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        return 1.0
    return float(np.mean(pred == gt))
