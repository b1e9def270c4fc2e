"""Dilated temporal-convolution denoiser with an explicit backward pass.

The network maps (noisy label state, step, per-frame features) to per-frame
class probabilities:

    h   = [x, cond] W_in + b_in
    e   = sinusoid(step) P + p                      # added before every layer
    h  += relu(conv_d(h + e; K_l) + b_l) V_l + c_l   # l = 0 .. L-1
    out = softmax(h W_out + b_out)

``conv_d`` is a width-3 convolution over time with dilation ``d`` and zero
padding. Everything is float64 numpy so gradients can be checked against
finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ..core import make_rng
from ..errors import SchemaError, ShapeError, IoError

MAGIC = b"D2PSEG1"
_HEADER = struct.Struct("<7s5I")


def dilation(layer):
    return 2 ** (layer % 4)


def param_names(layers):
    names = ["W_in", "b_in", "P_t", "p_t"]
    for l in range(layers):
        names += [f"K{l}", f"b{l}", f"V{l}", f"c{l}"]
    return names + ["W_out", "b_out"]


def param_shapes(C, D, L, W):
    shapes = {"W_in": (C + D, W), "b_in": (W,), "P_t": (W, W), "p_t": (W,)}
    for l in range(L):
        shapes[f"K{l}"] = (3, W, W)
        shapes[f"b{l}"] = (W,)
        shapes[f"V{l}"] = (W, W)
        shapes[f"c{l}"] = (W,)
    shapes["W_out"] = (W, C)
    shapes["b_out"] = (C,)
    return shapes


@dataclass(eq=False)
class DenoiserParams:
    num_classes: int
    feature_dim: int
    layers: int
    width: int
    total_steps: int
    tensors: dict

    def __post_init__(self):
        self.check()

    def check(self):
        shapes = param_shapes(self.num_classes, self.feature_dim, self.layers, self.width)
        if set(shapes) != set(self.tensors):
            raise SchemaError("parameter set does not match the declared architecture")
        for name, shape in shapes.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise SchemaError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise SchemaError(f"{name} contains non-finite values")

    def names(self):
        return param_names(self.layers)

    def copy(self):
        return DenoiserParams(
            self.num_classes, self.feature_dim, self.layers, self.width, self.total_steps,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    def equals(self, other):
        return (
            (self.num_classes, self.feature_dim, self.layers, self.width, self.total_steps)
            == (other.num_classes, other.feature_dim, other.layers, other.width, other.total_steps)
            and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.names())
        )


def init_params(num_classes, feature_dim, layers=8, width=32, total_steps=1000, seed=0):
    rng = make_rng(seed, "denoiser-init")
    shapes = param_shapes(num_classes, feature_dim, layers, width)
    tensors = {}
    for name in param_names(layers):
        shape = shapes[name]
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        elif name.startswith("K"):
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / (3 * width)), shape)
        elif name.startswith("V"):
            # residual branches start small so the stack is near-identity
            tensors[name] = rng.normal(0.0, 0.5 / math.sqrt(width * max(layers, 1)), shape)
        else:
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return DenoiserParams(num_classes, feature_dim, layers, width, total_steps, tensors)


def step_embedding(step, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = float(step) * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


def _conv(a, K, d):
    T = a.shape[0]
    z = a @ K[1]
    if d < T:
        z[d:] += a[:-d] @ K[0]
        z[:-d] += a[d:] @ K[2]
    return z


def _conv_backward(a, K, d, gz):
    """Gradients of ``_conv`` w.r.t. its input and kernel."""
    T = a.shape[0]
    gK = np.zeros_like(K)
    gK[1] = a.T @ gz
    ga = gz @ K[1].T
    if d < T:
        gK[0] = a[:-d].T @ gz[d:]
        gK[2] = a[d:].T @ gz[:-d]
        ga[:-d] += gz[d:] @ K[0].T
        ga[d:] += gz[:-d] @ K[2].T
    return ga, gK


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: DenoiserParams, x, step, cond):
    """Return (probabilities, cache) for one sequence."""
    x = np.asarray(x, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    C, D, W = params.num_classes, params.feature_dim, params.width
    if x.ndim != 2 or x.shape[1] != C:
        raise ShapeError(f"label state must be T x {C}, got {x.shape}")
    if cond.shape != (x.shape[0], D):
        raise ShapeError(f"conditioning must be {x.shape[0]} x {D}, got {cond.shape}")
    P = params.tensors
    inp = np.concatenate([x, cond], axis=1)
    emb = step_embedding(step, W)
    temb = emb @ P["P_t"] + P["p_t"]
    h = inp @ P["W_in"] + P["b_in"]
    layer_cache = []
    for l in range(params.layers):
        a = h + temb
        z = _conv(a, P[f"K{l}"], dilation(l)) + P[f"b{l}"]
        r = np.maximum(z, 0.0)
        layer_cache.append((a, z, r))
        h = h + r @ P[f"V{l}"] + P[f"c{l}"]
    logits = h @ P["W_out"] + P["b_out"]
    prob = softmax(logits)
    return prob, {"inp": inp, "emb": emb, "h_last": h, "layers": layer_cache, "prob": prob}


def backward(params: DenoiserParams, cache, grad_prob):
    """Parameter gradients given dLoss/dprob."""
    P = params.tensors
    prob = cache["prob"]
    g_logits = prob * (grad_prob - np.sum(grad_prob * prob, axis=1, keepdims=True))
    grads = {
        "W_out": cache["h_last"].T @ g_logits,
        "b_out": g_logits.sum(axis=0),
    }
    gh = g_logits @ P["W_out"].T
    g_temb = np.zeros(params.width)
    for l in reversed(range(params.layers)):
        a, z, r = cache["layers"][l]
        grads[f"V{l}"] = r.T @ gh
        grads[f"c{l}"] = gh.sum(axis=0)
        gz = (gh @ P[f"V{l}"].T) * (z > 0)
        grads[f"b{l}"] = gz.sum(axis=0)
        ga, grads[f"K{l}"] = _conv_backward(a, P[f"K{l}"], dilation(l), gz)
        g_temb += ga.sum(axis=0)
        gh = gh + ga
    grads["P_t"] = np.outer(cache["emb"], g_temb)
    grads["p_t"] = g_temb
    grads["W_in"] = cache["inp"].T @ gh
    grads["b_in"] = gh.sum(axis=0)
    return grads


def denoise(x_s, step, cond, params: DenoiserParams):
    """Per-frame class probabilities predicted from the noisy state at ``step``."""
    prob, _ = forward(params, x_s, step, cond)
    return prob


# --- checkpoint ------------------------------------------------------------


def save_params(params: DenoiserParams, path):
    header = _HEADER.pack(
        MAGIC, params.num_classes, params.feature_dim, params.layers, params.width, params.total_steps
    )
    body = b"".join(
        np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes() for n in params.names()
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header + body)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_params(path) -> DenoiserParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise SchemaError("checkpoint truncated")
    magic, C, D, L, W, S = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SchemaError("not a denoiser checkpoint (bad magic)")
    shapes = param_shapes(C, D, L, W)
    offset = _HEADER.size
    tensors = {}
    for name in param_names(L):
        n = int(np.prod(shapes[name]))
        end = offset + 8 * n
        if end > len(blob):
            raise SchemaError(f"checkpoint truncated inside {name}")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shapes[name])
        offset = end
    if offset != len(blob):
        raise SchemaError("trailing bytes after the last tensor")
    return DenoiserParams(C, D, L, W, S, tensors)
