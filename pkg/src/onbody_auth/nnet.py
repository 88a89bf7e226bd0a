"""Layer kernels with explicit backward passes.

Every layer works on a mini-batch: conv/pool tensors are (batch, channels,
length), dense tensors are (batch, features). ``*_forward`` returns the
output and a cache; ``*_backward`` consumes that cache.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- convolution

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1, unpadded 1-D convolution (cross-correlation).

    x: (B, C_in, L), w: (C_out, C_in, K), b: (C_out,) -> (B, C_out, L - K + 1)
    """
    B, c_in, L = x.shape
    c_out, c_in_w, K = w.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, kernel expects {c_in_w}")
    if L < K:
        raise ValueError(f"input length {L} is shorter than kernel size {K}")
    lo = L - K + 1
    # cols[(c, k), (b, t)] = x[b, c, t + k]
    cols = np.empty((c_in, K, B, lo))
    xt = x.transpose(1, 0, 2)
    for k in range(K):
        cols[:, k] = xt[:, :, k:k + lo]
    cols = cols.reshape(c_in * K, B * lo)
    out = w.reshape(c_out, -1) @ cols
    out = out.reshape(c_out, B, lo).transpose(1, 0, 2) + b[None, :, None]
    return np.ascontiguousarray(out), (cols, x.shape, w)


def conv1d_backward(dout: np.ndarray, cache):
    cols, (B, c_in, L), w = cache
    c_out, _, K = w.shape
    lo = L - K + 1
    d2 = dout.transpose(1, 0, 2).reshape(c_out, B * lo)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = dout.sum(axis=(0, 2))
    dcols = (w.reshape(c_out, -1).T @ d2).reshape(c_in, K, B, lo)
    dxt = np.zeros((c_in, B, L))
    for k in range(K):
        dxt[:, :, k:k + lo] += dcols[:, k]
    return dxt.transpose(1, 0, 2), dw, db


# ---------------------------------------------------------------- pooling

def maxpool1d_forward(x: np.ndarray, k: int = 2):
    """Non-overlapping max pooling; a trailing partial window is dropped and
    ties go to the earlier position."""
    B, C, L = x.shape
    if L < k:
        raise ValueError(f"input length {L} is shorter than pool size {k}")
    lo = L // k
    windows = x[:, :, :lo * k].reshape(B, C, lo, k)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    return out, (arg, x.shape, k)


def maxpool1d_backward(dout: np.ndarray, cache):
    arg, (B, C, L), k = cache
    lo = L // k
    dwin = np.zeros((B, C, lo, k))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=3)
    dx = np.zeros((B, C, L))
    dx[:, :, :lo * k] = dwin.reshape(B, C, lo * k)
    return dx


# ---------------------------------------------------------------- activations

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def sigmoid_forward(x: np.ndarray):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout: np.ndarray, s: np.ndarray) -> np.ndarray:
    return dout * s * (1.0 - s)


def softmax_forward(logits: np.ndarray):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, p


def softmax_backward(dout: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dout - np.sum(dout * p, axis=-1, keepdims=True))


# ---------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (B, in), w: (out, in), b: (out,)"""
    return x @ w.T + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# ---------------------------------------------------------------- loss

def xent_loss(probs: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax outputs and its gradient w.r.t. the logits.

    Returns (mean loss, per-sample losses, d(mean loss)/d(logits)).
    """
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = len(labels)
    picked = probs[np.arange(n), labels]
    per_sample = -np.log(np.maximum(picked, PROB_FLOOR))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(per_sample.mean()), per_sample, grad / n


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """In-place ``theta <- theta - lr * g`` in sorted-name order."""
    for name in sorted(params):
        if params[name].shape != grads[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        params[name] -= lr * grads[name]
    return params


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(tensors: dict[str, np.ndarray], path: Path, extra: dict | None = None):
    """JSON checkpoint; floats are written with ``repr`` so they round-trip exactly."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "tensors": [{"name": name, "shape": list(tensors[name].shape),
                     "values": [float(v) for v in np.asarray(tensors[name]).ravel()]}
                    for name in sorted(tensors)],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    tensors = {t["name"]: np.asarray(t["values"], dtype=np.float64).reshape(t["shape"])
               for t in doc["tensors"]}
    return tensors, doc.get("extra", {})
