"""The four players: extractor E, on/off predictor P, motion discriminator D
and environment classifier C.

E is a stack of 1-D convolutions over the profile read as a single-channel
sequence. P, D and C share one head shape: dense -> sigmoid -> dense ->
softmax. D and C read E(x) concatenated with P's output, where P's output is
a frozen input (no gradient reaches P through it).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import nnet
from ..profile import N_FEATURES
from ..seeding import rng_for

N_CLASSES_Y = 2
N_MOTIONS = 5
N_ENVIRONMENTS = 5


@dataclass(frozen=True)
class Architecture:
    input_length: int = N_FEATURES
    channels: int = 128
    kernel: int = 3
    n_conv: int = 8
    n_pooled: int = 5
    hidden: int = 64
    n_y: int = N_CLASSES_Y
    n_z: int = N_MOTIONS
    n_v: int = N_ENVIRONMENTS

    def lengths(self) -> list[int]:
        """Sequence length after each conv block."""
        out = []
        L = self.input_length
        for layer in range(self.n_conv):
            L = L - self.kernel + 1
            if L < 1:
                raise ValueError("conv stack is too deep for the input length")
            if layer < self.n_pooled:
                L //= 2
            out.append(L)
        return out

    @property
    def representation_size(self) -> int:
        return self.channels * self.lengths()[-1]


DEFAULT_ARCH = Architecture()
# 1x380 -> 189, 93, 45, 21, 9 (conv + pool) -> 7, 5, 3 (conv only) -> 128 x 3
assert DEFAULT_ARCH.lengths() == [189, 93, 45, 21, 9, 7, 5, 3]
assert DEFAULT_ARCH.representation_size == 384


def init_params(arch: Architecture, seed: int) -> dict[str, dict[str, np.ndarray]]:
    rng = rng_for(seed, "init")
    theta_e = {}
    c_in = 1
    for i in range(1, arch.n_conv + 1):
        shape = (arch.channels, c_in, arch.kernel)
        theta_e[f"conv{i}.w"] = nnet.glorot_uniform(rng, shape, c_in * arch.kernel,
                                                    arch.channels * arch.kernel)
        theta_e[f"conv{i}.b"] = np.zeros(arch.channels)
        c_in = arch.channels
    rep = arch.representation_size
    return {
        "e": theta_e,
        "p": _init_head(rng, rep, arch.hidden, arch.n_y),
        "d": _init_head(rng, rep + arch.n_y, arch.hidden, arch.n_z),
        "c": _init_head(rng, rep + arch.n_y, arch.hidden, arch.n_v),
    }


def _init_head(rng, n_in: int, hidden: int, n_out: int) -> dict[str, np.ndarray]:
    return {
        "fc1.w": nnet.glorot_uniform(rng, (hidden, n_in), n_in, hidden),
        "fc1.b": np.zeros(hidden),
        "fc2.w": nnet.glorot_uniform(rng, (n_out, hidden), hidden, n_out),
        "fc2.b": np.zeros(n_out),
    }


def extractor_forward(x: np.ndarray, theta_e: dict, arch: Architecture = DEFAULT_ARCH):
    """x: (B, 380) or (380,) -> (B, representation_size)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != arch.input_length:
        raise ValueError(f"expected {arch.input_length} input features, got {x.shape[1]}")
    h = x[:, None, :]
    caches = []
    for i in range(1, arch.n_conv + 1):
        h, c_conv = nnet.conv1d_forward(h, theta_e[f"conv{i}.w"], theta_e[f"conv{i}.b"])
        h, c_relu = nnet.relu_forward(h)
        c_pool = None
        if i <= arch.n_pooled:
            h, c_pool = nnet.maxpool1d_forward(h, 2)
        caches.append((c_conv, c_relu, c_pool))
    flat_shape = h.shape
    return h.reshape(h.shape[0], -1), (caches, flat_shape)


def extractor_backward(d_rep: np.ndarray, cache) -> dict[str, np.ndarray]:
    caches, flat_shape = cache
    dh = d_rep.reshape(flat_shape)
    grads = {}
    for i in range(len(caches), 0, -1):
        c_conv, c_relu, c_pool = caches[i - 1]
        if c_pool is not None:
            dh = nnet.maxpool1d_backward(dh, c_pool)
        dh = nnet.relu_backward(dh, c_relu)
        dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = nnet.conv1d_backward(dh, c_conv)
    return grads


def head_forward(inp: np.ndarray, theta: dict):
    """dense -> sigmoid -> dense -> softmax. Returns probabilities and cache."""
    a1, c1 = nnet.dense_forward(inp, theta["fc1.w"], theta["fc1.b"])
    g, cs = nnet.sigmoid_forward(a1)
    logits, c2 = nnet.dense_forward(g, theta["fc2.w"], theta["fc2.b"])
    probs, _ = nnet.softmax_forward(logits)
    return probs, (c1, cs, c2)


def head_backward(d_logits: np.ndarray, cache):
    """Backward from the gradient at the logits; returns (d_input, grads)."""
    c1, cs, c2 = cache
    dg, dw2, db2 = nnet.dense_backward(d_logits, c2)
    da1 = nnet.sigmoid_backward(dg, cs)
    dinp, dw1, db1 = nnet.dense_backward(da1, c1)
    return dinp, {"fc1.w": dw1, "fc1.b": db1, "fc2.w": dw2, "fc2.b": db2}


def predict_label(probs: np.ndarray) -> np.ndarray:
    """argmax over (off, on); an exact tie resolves to off (deny)."""
    probs = np.atleast_2d(probs)
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def concat_frozen(rep: np.ndarray, u: np.ndarray) -> np.ndarray:
    # u is copied so nothing downstream can alias the predictor's output
    return np.concatenate([rep, np.array(u, dtype=np.float64, copy=True)], axis=1)


class AdversarialModel:
    """Parameter container plus forward helpers for inference."""

    def __init__(self, params: dict, arch: Architecture = DEFAULT_ARCH):
        self.params = params
        self.arch = arch

    @classmethod
    def initialise(cls, seed: int, arch: Architecture = DEFAULT_ARCH) -> "AdversarialModel":
        return cls(init_params(arch, seed), arch)

    def represent(self, X: np.ndarray) -> np.ndarray:
        return extractor_forward(X, self.params["e"], self.arch)[0]

    def predict_proba(self, X: np.ndarray, batch: int = 512) -> np.ndarray:
        X = np.atleast_2d(X)
        out = [head_forward(self.represent(X[i:i + batch]), self.params["p"])[0]
               for i in range(0, len(X), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.arch.n_y))

    def adversary_proba(self, X: np.ndarray, which: str) -> np.ndarray:
        rep = self.represent(X)
        u = head_forward(rep, self.params["p"])[0]
        return head_forward(concat_frozen(rep, u), self.params[which])[0]

    def flat_tensors(self) -> dict[str, np.ndarray]:
        return {f"{group}.{name}": arr for group, tensors in self.params.items()
                for name, arr in tensors.items()}

    def save(self, path, extra: dict | None = None):
        nnet.save_checkpoint(self.flat_tensors(), path,
                             extra={"architecture": asdict(self.arch), **(extra or {})})

    @classmethod
    def load(cls, path) -> tuple["AdversarialModel", dict]:
        tensors, extra = nnet.load_checkpoint(path)
        arch = Architecture(**extra.get("architecture", {}))
        params = {g: {} for g in "epdc"}
        for full, arr in tensors.items():
            group, name = full.split(".", 1)
            params[group][name] = arr
        return cls(params, arch), extra
