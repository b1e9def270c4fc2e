"""Cross-entropy plus optional boundary-alignment and temporal-smoothness terms.

Each term returns its value and its gradient with respect to the predicted
probabilities so the denoiser's backward pass can consume the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError

EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    use_ce: bool = True
    use_ba: bool = False
    use_ts: bool = False
    lambda_ba: float = 0.1
    lambda_ts: float = 0.15
    ts_clip: float = 4.0
    ba_sigma: float = 2.0

    def __post_init__(self):
        if not self.use_ce:
            raise ValueError("cross-entropy is always part of the objective")
        if min(self.lambda_ba, self.lambda_ts, self.ts_clip, self.ba_sigma) < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def name(self):
        parts = ["CE"] + (["BA"] if self.use_ba else []) + (["TS"] if self.use_ts else [])
        return " + ".join(parts)

    @classmethod
    def from_names(cls, names, **kw):
        names = {n.strip().lower() for n in names if n.strip()}
        unknown = names - {"ce", "ba", "ts"}
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")
        return cls(use_ba="ba" in names, use_ts="ts" in names, **kw)


# Table-style ablation rows, in the order they are reported.
ABLATION = (
    LossConfig(),
    LossConfig(use_ba=True),
    LossConfig(use_ba=True, use_ts=True),
    LossConfig(use_ts=True),
)


def check_simplex(p, tol=1e-6):
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise DomainError("predictions are not on the probability simplex")


def cross_entropy(p, gt):
    T = p.shape[0]
    idx = (np.arange(T), gt)
    picked = np.maximum(p[idx], EPS)
    grad = np.zeros_like(p)
    grad[idx] = -1.0 / (picked * T) * (p[idx] > EPS)
    return float(-np.log(picked).mean()), grad


def temporal_smoothness(p, clip):
    T, C = p.shape
    grad = np.zeros_like(p)
    if T < 2:
        return 0.0, grad
    logp = np.log(np.maximum(p, EPS))
    delta = logp[1:] - logp[:-1]
    sq = delta ** 2
    n = (T - 1) * C
    value = float(np.minimum(sq, clip ** 2).sum() / n)
    g_delta = 2.0 * delta * (sq < clip ** 2) / n
    g_logp = np.zeros_like(p)
    g_logp[1:] += g_delta
    g_logp[:-1] -= g_delta
    grad = g_logp / np.maximum(p, EPS) * (p > EPS)
    return value, grad


def boundary_targets(gt, sigma):
    """Boundary indicator for t >= 1, Gaussian-smoothed and scaled so its peak is 1."""
    gt = np.asarray(gt)
    b = (gt[1:] != gt[:-1]).astype(np.float64)
    if b.size == 0 or not b.any():
        return b
    if sigma > 0:
        r = int(np.ceil(3 * sigma))
        k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
        b = np.convolve(b, k)[r:r + b.size]
    return np.clip(b / b.max(), 0.0, 1.0)


def boundary_alignment(p, gt, sigma):
    T = p.shape[0]
    grad = np.zeros_like(p)
    if T < 2:
        return 0.0, grad
    y = boundary_targets(gt, sigma)
    same = np.sum(p[1:] * p[:-1], axis=1)
    bhat = np.clip(1.0 - same, EPS, 1.0 - EPS)
    n = T - 1
    value = float(-(y * np.log(bhat) + (1 - y) * np.log(1 - bhat)).mean())
    inside = ((1.0 - same) > EPS) & ((1.0 - same) < 1.0 - EPS)
    g_bhat = (-(y / bhat) + (1 - y) / (1 - bhat)) / n * inside
    g_same = -g_bhat
    grad[1:] += g_same[:, None] * p[:-1]
    grad[:-1] += g_same[:, None] * p[1:]
    return value, grad


def loss(pred, gt, cfg: LossConfig, with_grad=False):
    """Total objective and its parts; optionally also dLoss/dpred."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if gt.ndim == 2:
        gt = gt.argmax(axis=1)
    if pred.ndim != 2 or pred.shape[0] != gt.shape[0]:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} disagree")
    check_simplex(pred)
    ce, g = cross_entropy(pred, gt)
    parts = {"ce": ce, "ba": 0.0, "ts": 0.0}
    total = ce
    if cfg.use_ba:
        parts["ba"], g_ba = boundary_alignment(pred, gt, cfg.ba_sigma)
        total += cfg.lambda_ba * parts["ba"]
        g = g + cfg.lambda_ba * g_ba
    if cfg.use_ts:
        parts["ts"], g_ts = temporal_smoothness(pred, cfg.ts_clip)
        total += cfg.lambda_ts * parts["ts"]
        g = g + cfg.lambda_ts * g_ts
    parts["total"] = total
    if with_grad:
        return total, parts, g
    return total, parts
