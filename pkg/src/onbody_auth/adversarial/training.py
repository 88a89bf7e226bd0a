"""Loss evaluation and the alternating minimax training loop."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import nnet
from ..seeding import rng_for
from .model import (DEFAULT_ARCH, AdversarialModel, Architecture, concat_frozen,
                    extractor_backward, extractor_forward, head_backward, head_forward)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    beta: float = 0.5
    lr_e: float = 0.001
    lr_p: float = 0.001
    lr_d: float = 0.001
    lr_c: float = 0.001
    batch: int = 128
    outer_iters: int = 2000
    inner_loops: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.batch < 1 or self.outer_iters < 0 or self.inner_loops < 1:
            raise ValueError("batch, outer_iters and inner_loops must be positive")

    @property
    def baseline(self) -> bool:
        return self.alpha == 0 and self.beta == 0

    def as_baseline(self) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), "alpha": 0.0, "beta": 0.0})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass(frozen=True)
class Losses:
    L_P: float
    L_D: float
    L_C: float
    V: float


@dataclass
class TrainResult:
    model: AdversarialModel
    history: list[dict] = field(default_factory=list)

    def history_array(self, key: str) -> np.ndarray:
        return np.array([h[key] for h in self.history])

    def converged(self, key: str, tail: float = 0.2) -> float:
        """Mean of ``key`` over the last ``tail`` fraction of iterations."""
        values = self.history_array(key)
        k = max(1, int(round(len(values) * tail)))
        return float(values[-k:].mean())


def value_function(L_P: float, L_D: float, L_C: float, alpha: float, beta: float) -> float:
    return L_P - alpha * L_D - beta * L_C


def adversary_losses(params: dict, x: np.ndarray, z: np.ndarray, v: np.ndarray,
                     u: np.ndarray | None = None, arch: Architecture = DEFAULT_ARCH):
    """L_D, L_C and their parameter gradients.

    ``u`` is the predictor output treated as a constant; when omitted it is
    computed from the current predictor and then detached. The returned
    gradients have entries for E, D and C only, never for P.
    """
    rep, e_cache = extractor_forward(x, params["e"], arch)
    if u is None:
        u = head_forward(rep, params["p"])[0]
    o = concat_frozen(rep, u)
    n_rep = rep.shape[1]
    grads = {}
    losses = []
    for which, labels in (("d", z), ("c", v)):
        probs, cache = head_forward(o, params[which])
        loss, _, d_logits = nnet.xent_loss(probs, labels)
        d_o, grads[which] = head_backward(d_logits, cache)
        # only the E(x) part of the concatenation carries gradient
        grads[f"{which}->e"] = d_o[:, :n_rep]
        losses.append(loss)
    grads["e_d"] = extractor_backward(grads["d->e"], e_cache)
    grads["e_c"] = extractor_backward(grads["c->e"], e_cache)
    return losses[0], losses[1], grads


def losses(params: dict, x: np.ndarray, y: np.ndarray, z: np.ndarray, v: np.ndarray,
           alpha: float, beta: float, arch: Architecture = DEFAULT_ARCH) -> Losses:
    """Batch-mean L_P, L_D, L_C and the value function V = L_P - alpha L_D - beta L_C."""
    rep, _ = extractor_forward(x, params["e"], arch)
    p, _ = head_forward(rep, params["p"])
    o = concat_frozen(rep, p)
    L_P = nnet.xent_loss(p, y)[0]
    L_D = nnet.xent_loss(head_forward(o, params["d"])[0], z)[0]
    L_C = nnet.xent_loss(head_forward(o, params["c"])[0], v)[0]
    return Losses(L_P, L_D, L_C, value_function(L_P, L_D, L_C, alpha, beta))


def _scaled_sum(a: dict, b: dict, c: dict, wa: float, wb: float, wc: float) -> dict:
    return {k: wa * a[k] + wb * b[k] + wc * c[k] for k in a}


def train(X: np.ndarray, y: np.ndarray, z: np.ndarray, v: np.ndarray, cfg: TrainConfig,
          arch: Architecture = DEFAULT_ARCH, model: AdversarialModel | None = None,
          progress=None) -> TrainResult:
    """Alternating minimax training.

    Per outer iteration: one predictor step on L_P, then ``inner_loops``
    rounds of (freeze u = P(E(x)); step D on L_D; step C on L_C; step E on
    V = L_P - alpha L_D - beta L_C). With alpha = beta = 0 the extractor only
    sees L_P and D, C become passive observers.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n == 0:
        raise ValueError("training set is empty")
    if cfg.batch > n:
        raise ValueError(f"batch size {cfg.batch} exceeds dataset size {n}")
    y, z, v = (np.asarray(a, dtype=np.int64) for a in (y, z, v))
    if model is None:
        model = AdversarialModel.initialise(cfg.seed, arch)
    params = model.params
    rng = rng_for(cfg.seed, "batches")
    history = []
    for it in range(cfg.outer_iters):
        idx = np.sort(rng.choice(n, size=cfg.batch, replace=False))
        xb, yb, zb, vb = X[idx], y[idx], z[idx], v[idx]

        rep, e_cache = extractor_forward(xb, params["e"], arch)
        p, p_cache = head_forward(rep, params["p"])
        _, _, d_logits = nnet.xent_loss(p, yb)
        _, g_p = head_backward(d_logits, p_cache)
        nnet.sgd_step(params["p"], g_p, cfg.lr_p)

        for inner in range(cfg.inner_loops):
            if inner > 0:
                rep, e_cache = extractor_forward(xb, params["e"], arch)
            p, p_cache = head_forward(rep, params["p"])
            L_P, _, d_logits_p = nnet.xent_loss(p, yb)
            d_rep_p, _ = head_backward(d_logits_p, p_cache)

            o = concat_frozen(rep, p)
            n_rep = rep.shape[1]
            probs_d, cache_d = head_forward(o, params["d"])
            L_D, _, d_logits_d = nnet.xent_loss(probs_d, zb)
            d_o_d, g_d = head_backward(d_logits_d, cache_d)
            probs_c, cache_c = head_forward(o, params["c"])
            L_C, _, d_logits_c = nnet.xent_loss(probs_c, vb)
            d_o_c, g_c = head_backward(d_logits_c, cache_c)
            nnet.sgd_step(params["d"], g_d, cfg.lr_d)
            nnet.sgd_step(params["c"], g_c, cfg.lr_c)

            d_rep = d_rep_p - cfg.alpha * d_o_d[:, :n_rep] - cfg.beta * d_o_c[:, :n_rep]
            g_e = extractor_backward(d_rep, e_cache)
            nnet.sgd_step(params["e"], g_e, cfg.lr_e)

        history.append({"iter": it, "L_P": L_P, "L_D": L_D, "L_C": L_C,
                        "V": value_function(L_P, L_D, L_C, cfg.alpha, cfg.beta)})
        if progress is not None:
            progress(history[-1])
    return TrainResult(model, history)


def write_history(history: list[dict], path: Path):
    Path(path).write_text(json.dumps(history) + "\n")


def read_history(path: Path) -> list[dict]:
    return json.loads(Path(path).read_text())
