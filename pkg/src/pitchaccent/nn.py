"""Batched numpy layers with hand-written backward passes, Adam, and gradient checks.

Arrays carry a leading batch axis. Convolutions use NCHW layout and compute
valid cross-correlation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv_output_length(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


# -- convolution ------------------------------------------------------------

def _windows(x, kh, kw, sh, sw):
    # (N, C, H', W', kh, kw) view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def conv2d_forward(x, kernels, bias, stride=(1, 1), depthwise=False):
    """Valid cross-correlation of ``x`` (N, C, H, W) with ``kernels`` (O, C, kh, kw).

    With ``depthwise`` the kernels have shape (C, 1, kh, kw) and channel c is
    filtered only by kernel c. Returns ``(out, cache)``.
    """
    n, c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    sh, sw = stride
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if depthwise:
        if o != c or ck != 1:
            raise ValueError(f"depthwise kernels must be ({c}, 1, kh, kw), got {kernels.shape}")
    elif ck != c:
        raise ValueError(f"kernel expects {ck} input channels, input has {c}")
    win = _windows(x, kh, kw, sh, sw)
    if depthwise:
        out = np.einsum("nchwij,cij->nchw", win, kernels[:, 0])
    else:
        out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias[None, :, None, None]
    return out, (x.shape, win, kernels, stride, depthwise)


def conv2d_backward(dout, cache, need_dx=True):
    """Gradients ``(dx, dkernels, dbias)``; ``dx`` is None unless requested."""
    x_shape, win, kernels, (sh, sw), depthwise = cache
    _, _, kh, kw = kernels.shape
    dbias = dout.sum(axis=(0, 2, 3))
    if depthwise:
        dk = np.einsum("nchw,nchwij->cij", dout, win)[:, None]
    else:
        dk = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    dx = None
    if need_dx:
        dx = np.zeros(x_shape, dtype=dout.dtype)
        ho, wo = dout.shape[2], dout.shape[3]
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + sh * (ho - 1) + 1, sh)
                cols = slice(j, j + sw * (wo - 1) + 1, sw)
                if depthwise:
                    dx[:, :, rows, cols] += dout * kernels[None, :, 0, i, j, None, None]
                else:
                    contrib = np.tensordot(dout, kernels[:, :, i, j], axes=([1], [0]))
                    dx[:, :, rows, cols] += contrib.transpose(0, 3, 1, 2)
    return dx, dk, dbias


# -- pooling, dense, activations -------------------------------------------

def maxpool_over_time_forward(x):
    """Global max over axis 2 of (N, C, H, 1) or (N, C, H); returns (N, C)."""
    flat = x.reshape(x.shape[0], x.shape[1], x.shape[2])
    idx = np.argmax(flat, axis=2)  # first maximum on ties
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
    return out, (x.shape, idx)


def maxpool_over_time_backward(dout, cache):
    shape, idx = cache
    dx = np.zeros((shape[0], shape[1], shape[2]), dtype=dout.dtype)
    np.put_along_axis(dx, idx[:, :, None], dout[:, :, None], axis=2)
    return dx.reshape(shape)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def dense_forward(x, weights, bias, activation="identity"):
    """``activation(x @ W.T + b)`` for x of shape (N, in), W of shape (out, in)."""
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"dense layer expects {weights.shape[1]} inputs, got {x.shape[-1]}")
    z = x @ weights.T + bias
    if activation == "relu":
        out, mask = relu_forward(z)
    elif activation == "identity":
        out, mask = z, None
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out, (x, weights, mask)


def dense_backward(dout, cache):
    x, weights, mask = cache
    if mask is not None:
        dout = dout * mask
    return dout @ weights, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x, p, train, rng=None):
    """Inverted dropout: zero with probability ``p`` and rescale survivors in training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    keep = rng.random(x.shape) >= p
    scale = keep / (1.0 - p)
    return x * scale, scale


def dropout_backward(dout, scale):
    return dout if scale is None else dout * scale


# -- loss -------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, gold):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(logits)
    gold = np.atleast_1d(np.asarray(gold))
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), gold].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), gold] -= 1.0
    return float(loss), dlogits / n


def l2_penalty(weights: dict, lam: float):
    """``lam * sum(w**2)`` over the given tensors, with per-tensor gradients."""
    value = lam * sum(float(np.sum(w * w)) for w in weights.values())
    grads = {k: 2.0 * lam * w for k, w in weights.items()}
    return value, grads


def softmax_xent_l2(logits, gold, weights: dict, lam: float):
    """Cross-entropy plus L2 on ``weights``; returns (loss, dlogits, dweights)."""
    data_loss, dlogits = softmax_xent(logits, gold)
    penalty, dweights = l2_penalty(weights, lam)
    return data_loss + penalty, dlogits, dweights


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- verification -----------------------------------------------------------

def grad_check(fn, params: dict, epsilon: float = 1e-5, n_samples: int = 200, rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(params) -> (loss, grads)`` must be deterministic. Checks ``n_samples``
    randomly chosen scalar parameters (all of them if fewer exist).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = fn(params)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    picks = np.arange(total) if total <= n_samples else rng.choice(total, n_samples, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, i = names[t], int(flat - offsets[t])
        view = params[name].reshape(-1)
        orig = view[i]
        view[i] = orig + epsilon
        plus, _ = fn(params)
        view[i] = orig - epsilon
        minus, _ = fn(params)
        view[i] = orig
        numeric = (plus - minus) / (2 * epsilon)
        analytic = float(grads[name].reshape(-1)[i])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: dict, seed: int | None = None, config_hash: str = "", extra=None) -> None:
    """Write named tensors plus metadata to an ``.npz`` container."""
    meta = {"version": CHECKPOINT_VERSION, "seed": seed, "config_hash": config_hash,
            "tensors": {k: list(v.shape) for k, v in params.items()}}
    if extra:
        meta.update(extra)
    arrays = {f"param/{k}": np.ascontiguousarray(v) for k, v in params.items()}
    with open(Path(path), "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Return ``(params, meta)`` from a file written by ``save_checkpoint``."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    return params, meta
