"""Exact equilibrium analysis on small discrete joints q(x, y, z, v).

Two independent routes are compared throughout:

* closed form: conditional entropies and conditional distributions summed
  directly over the finite space;
* brute force: tabular players (one free distribution per representation
  value) fitted by numerical minimisation of their cross-entropy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .. import nnet
from ..seeding import rng_for

ROUND = 12


@dataclass(frozen=True)
class TabularJoint:
    """Joint probabilities indexed q[x, y, z, v]."""

    q: np.ndarray
    name: str = "joint"

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 4 or q.shape[1] != 2:
            raise ValueError("joint must have shape (n_x, 2, n_z, n_v)")
        if not 1 <= q.shape[0] <= 8 or q.shape[2] > 3 or q.shape[3] > 3:
            raise ValueError("joint too large: n_x <= 8, n_z <= 3, n_v <= 3")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {q.sum()}, not 1")
        if np.any(q.sum(axis=(1, 2, 3)) == 0):
            raise ValueError("every x must have positive probability")
        object.__setattr__(self, "q", q)

    @property
    def n_x(self) -> int:
        return self.q.shape[0]

    def px(self) -> np.ndarray:
        return self.q.sum(axis=(1, 2, 3))

    def joint_with(self, which: str) -> np.ndarray:
        """q(x, a) for a in {y, z, v}."""
        axes = {"y": (2, 3), "z": (1, 3), "v": (1, 2)}[which]
        return self.q.sum(axis=axes)

    def posterior_y(self) -> np.ndarray:
        """q_y(.|x), one row per x."""
        qxy = self.joint_with("y")
        return qxy / qxy.sum(axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {"name": self.name, "shape": list(self.q.shape), "q": self.q.ravel().tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "TabularJoint":
        try:
            q = np.asarray(obj["q"], dtype=np.float64).reshape(obj["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed joint: {exc}") from exc
        return cls(q, obj.get("name", "joint"))

    @classmethod
    def from_conditionals(cls, px, py1, pz, pv, name="joint") -> "TabularJoint":
        """Build q(x) q(y|x) q(z|x) q(v|x), i.e. y, z, v independent given x."""
        px, py1 = np.asarray(px, float), np.asarray(py1, float)
        pz, pv = np.asarray(pz, float), np.asarray(pv, float)
        py = np.stack([1 - py1, py1], axis=1)
        q = px[:, None, None, None] * py[:, :, None, None] * pz[:, None, :, None] * pv[:, None, None, :]
        return cls(q / q.sum(), name)


# ---------------------------------------------------------------- closed form

def _keys(rep) -> list:
    """Hashable group key per x for a representation given as rows or labels."""
    rep = np.asarray(rep, dtype=np.float64)
    if rep.ndim == 1:
        rep = rep[:, None]
    return [tuple(np.round(row, ROUND)) for row in rep]


def group_ids(rep) -> np.ndarray:
    keys = _keys(rep)
    index = {}
    return np.array([index.setdefault(k, len(index)) for k in keys])


def conditional_entropy(q_xa: np.ndarray, rep) -> float:
    """H(a | rep(x)) in nats for the joint q(x, a) and a deterministic map rep."""
    gid = group_ids(rep)
    q_ga = np.zeros((gid.max() + 1, q_xa.shape[1]))
    np.add.at(q_ga, gid, q_xa)
    q_g = q_ga.sum(axis=1, keepdims=True)
    mask = q_ga > 0
    return float(-np.sum(q_ga[mask] * np.log((q_ga / np.where(q_g > 0, q_g, 1))[mask])))


def conditional_table(q_xa: np.ndarray, rep) -> np.ndarray:
    """q(a | rep(x)) evaluated at every x (rows)."""
    gid = group_ids(rep)
    q_ga = np.zeros((gid.max() + 1, q_xa.shape[1]))
    np.add.at(q_ga, gid, q_xa)
    table = q_ga / q_ga.sum(axis=1, keepdims=True)
    return table[gid]


def best_representation(joint: TabularJoint) -> np.ndarray:
    """E*(x) = q_y(.|x)."""
    return joint.posterior_y()


def identity_representation(joint: TabularJoint) -> np.ndarray:
    return np.eye(joint.n_x)


def partition_representation(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.float64)[:, None]


def set_partitions(n: int):
    """All set partitions of range(n) as label vectors (restricted growth strings)."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield list(prefix)
            return
        for label in range(top + 2):
            yield from grow(prefix + [label], max(top, label))
    yield from grow([0], 0) if n else iter([[]])


# ---------------------------------------------------------------- brute force

def fit_tabular_player(q_xa: np.ndarray, rep) -> tuple[float, np.ndarray]:
    """Minimise E[-log player(a | rep(x))] over free per-group distributions.

    Returns the minimal loss and the fitted distribution at every x.
    """
    gid = group_ids(rep)
    n_g, n_a = gid.max() + 1, q_xa.shape[1]
    q_ga = np.zeros((n_g, n_a))
    np.add.at(q_ga, gid, q_xa)
    q_g = q_ga.sum(axis=1)

    def objective(theta):
        logits = theta.reshape(n_g, n_a)
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        loss = -np.sum(q_ga * logp)
        grad = q_g[:, None] * p - q_ga
        return loss, grad.ravel()

    res = minimize(objective, np.zeros(n_g * n_a), jac=True, method="L-BFGS-B",
                   bounds=[(-60.0, 60.0)] * (n_g * n_a),
                   options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 10000})
    logits = res.x.reshape(n_g, n_a)
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return float(res.fun), p[gid]


# ---------------------------------------------------------------- report

@dataclass
class Check:
    name: str
    extractor: str
    lhs: float
    rhs: float
    tol: float

    @property
    def error(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def passed(self) -> bool:
        return self.error <= self.tol

    def to_json(self) -> dict:
        return {"check": self.name, "extractor": self.extractor, "lhs": self.lhs,
                "rhs": self.rhs, "error": self.error, "tol": self.tol, "pass": self.passed}


@dataclass
class EquilibriumReport:
    joint: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"joint": self.joint, "pass": self.passed, "checks": [c.to_json() for c in self.checks]}


CHECK_NAMES = (
    "optimal_predictor_output",
    "optimal_predictor_loss",
    "optimal_discriminator_loss",
    "optimal_classifier_loss",
    "virtual_value_function",
    "extractor_keeps_label_information",
    "extractor_motion_invariance",
    "extractor_environment_invariance",
    "equilibrium_predictor_output",
    "equilibrium_discriminator_output",
    "equilibrium_classifier_output",
    "value_lower_bound",
)


def _player_checks(joint: TabularJoint, rep, label: str, alpha: float, beta: float,
                   tol: float) -> list[Check]:
    q_xy, q_xz, q_xv = (joint.joint_with(a) for a in "yzv")
    checks = []
    loss_p, p_fit = fit_tabular_player(q_xy, rep)
    p_closed = conditional_table(q_xy, rep)
    checks.append(Check("optimal_predictor_output", label, float(np.abs(p_fit - p_closed).max()), 0.0, 1e-4))
    h_y = conditional_entropy(q_xy, rep)
    checks.append(Check("optimal_predictor_loss", label, loss_p, h_y, tol))

    # adversaries read (E(x), P(.|E(x))) with the optimal predictor plugged in
    adv_input = np.column_stack([np.asarray(rep, float).reshape(joint.n_x, -1), p_closed])
    loss_d, _ = fit_tabular_player(q_xz, adv_input)
    h_z = conditional_entropy(q_xz, adv_input)
    checks.append(Check("optimal_discriminator_loss", label, loss_d, h_z, tol))
    loss_c, _ = fit_tabular_player(q_xv, adv_input)
    h_v = conditional_entropy(q_xv, adv_input)
    checks.append(Check("optimal_classifier_loss", label, loss_c, h_v, tol))
    checks.append(Check("virtual_value_function", label,
                        loss_p - alpha * loss_d - beta * loss_c,
                        h_y - alpha * h_z - beta * h_v, tol))
    return checks


def virtual_value(joint: TabularJoint, rep, alpha: float, beta: float) -> float:
    q_xy, q_xz, q_xv = (joint.joint_with(a) for a in "yzv")
    post = conditional_table(q_xy, rep)
    adv_input = np.column_stack([np.asarray(rep, float).reshape(joint.n_x, -1), post])
    return (conditional_entropy(q_xy, rep) - alpha * conditional_entropy(q_xz, adv_input)
            - beta * conditional_entropy(q_xv, adv_input))


def value_lower_bound(joint: TabularJoint, rep, alpha: float, beta: float) -> float:
    """H(y|x) - alpha H(z | q_y(.|E(x))) - beta H(v | q_y(.|E(x)))."""
    q_xy, q_xz, q_xv = (joint.joint_with(a) for a in "yzv")
    post = conditional_table(q_xy, rep)
    return (conditional_entropy(q_xy, np.eye(joint.n_x)) - alpha * conditional_entropy(q_xz, post)
            - beta * conditional_entropy(q_xv, post))


def tabular_equilibrium_check(joint: TabularJoint, alpha: float = 0.5, beta: float = 0.5,
                              tol: float = 1e-6, seed: int = 0) -> EquilibriumReport:
    report = EquilibriumReport(joint.name)
    q_xy, q_xz, q_xv = (joint.joint_with(a) for a in "yzv")
    rng = rng_for(seed, "partition", joint.name)
    extractors = {
        "identity": identity_representation(joint),
        "random_partition": partition_representation(rng.integers(0, max(1, joint.n_x // 2), joint.n_x)),
        "best": best_representation(joint),
    }
    for label, rep in extractors.items():
        report.checks.extend(_player_checks(joint, rep, label, alpha, beta, tol))

    best = extractors["best"]
    post_best = conditional_table(q_xy, best)
    h_y_x = conditional_entropy(q_xy, np.eye(joint.n_x))
    report.checks.append(Check("extractor_keeps_label_information", "best",
                               conditional_entropy(q_xy, best), h_y_x, tol))
    for name, q_xa in (("extractor_motion_invariance", q_xz), ("extractor_environment_invariance", q_xv)):
        lhs = conditional_entropy(q_xa, np.column_stack([best, post_best]))
        rhs = conditional_entropy(q_xa, post_best)
        report.checks.append(Check(name, "best", lhs, rhs, tol))

    # equilibrium outputs: fitted tabular players on E* vs q(.|q_y(.|x))
    post_x = joint.posterior_y()
    _, p_fit = fit_tabular_player(q_xy, best)
    report.checks.append(Check("equilibrium_predictor_output", "best",
                               float(np.abs(p_fit - post_x).max()), 0.0, 1e-4))
    adv_input = np.column_stack([best, p_fit])
    for name, q_xa in (("equilibrium_discriminator_output", q_xz), ("equilibrium_classifier_output", q_xv)):
        _, fitted = fit_tabular_player(q_xa, np.round(adv_input, 6))
        target = conditional_table(q_xa, post_x)
        report.checks.append(Check(name, "best", float(np.abs(fitted - target).max()), 0.0, 1e-4))

    # every deterministic extractor (set partition of x) respects the bound, E* attains it
    worst_gap = math.inf
    for labels in set_partitions(joint.n_x):
        rep = partition_representation(labels)
        worst_gap = min(worst_gap, virtual_value(joint, rep, alpha, beta)
                        - value_lower_bound(joint, rep, alpha, beta))
    report.checks.append(Check("value_lower_bound", "all_partitions", min(worst_gap, 0.0), 0.0, tol))
    report.checks.append(Check("value_lower_bound", "best", virtual_value(joint, best, alpha, beta),
                               value_lower_bound(joint, best, alpha, beta), tol))
    return report


# ---------------------------------------------------------------- gradient route

@dataclass(frozen=True)
class TinyConfig:
    alpha: float = 0.5
    beta: float = 0.5
    lr: float = 0.5
    lr_e: float = 0.5
    hidden: int = 4
    batch: int = 256
    outer_iters: int = 4000
    inner_loops: int = 2
    seed: int = 0


def _dense_init(rng, n_out, n_in):
    return {"w": nnet.glorot_uniform(rng, (n_out, n_in), n_in, n_out), "b": np.zeros(n_out)}


class TinyModel:
    """One dense layer per player on one-hot x.

    The extractor's layer is squashed by a sigmoid: with an unbounded linear
    representation the extractor wins the minimax game by inflating its
    outputs until the adversaries' losses diverge.
    """

    def __init__(self, joint: TabularJoint, cfg: TinyConfig):
        rng = rng_for(cfg.seed, "tiny-init", joint.name)
        n_z, n_v = joint.q.shape[2], joint.q.shape[3]
        self.players = {
            "e": _dense_init(rng, cfg.hidden, joint.n_x),
            "p": _dense_init(rng, 2, cfg.hidden),
            "d": _dense_init(rng, n_z, cfg.hidden + 2),
            "c": _dense_init(rng, n_v, cfg.hidden + 2),
        }

    def forward(self, onehot: np.ndarray):
        a_e, c_e = nnet.dense_forward(onehot, self.players["e"]["w"], self.players["e"]["b"])
        rep, c_s = nnet.sigmoid_forward(a_e)
        logits_p, c_p = nnet.dense_forward(rep, self.players["p"]["w"], self.players["p"]["b"])
        p = nnet.softmax_forward(logits_p)[0]
        o = np.concatenate([rep, p.copy()], axis=1)
        out = {"rep": rep, "p": p, "o": o, "c_e": c_e, "c_s": c_s, "c_p": c_p}
        for k in "dc":
            logits, cache = nnet.dense_forward(o, self.players[k]["w"], self.players[k]["b"])
            out[k] = nnet.softmax_forward(logits)[0]
            out[f"c_{k}"] = cache
        return out

    def population_losses(self, joint: TabularJoint) -> dict[str, float]:
        """Exact expected cross-entropies under q."""
        out = self.forward(np.eye(joint.n_x))
        res = {}
        for key, player in (("y", "p"), ("z", "d"), ("v", "c")):
            q_xa = joint.joint_with(key)
            res[key] = float(-np.sum(q_xa * np.log(np.maximum(out[player], nnet.PROB_FLOOR))))
        return {"L_P": res["y"], "L_D": res["z"], "L_C": res["v"]}


def _sample(joint: TabularJoint, rng: np.random.Generator, m: int):
    flat = joint.q.ravel()
    idx = rng.choice(flat.size, size=m, p=flat / flat.sum())
    x, y, z, v = np.unravel_index(idx, joint.q.shape)
    return np.eye(joint.n_x)[x], y, z, v


def _step(params: dict, grads: tuple, lr: float):
    nnet.sgd_step(params, {"w": grads[0], "b": grads[1]}, lr)


def train_tiny(joint: TabularJoint, cfg: TinyConfig) -> TinyModel:
    """Alternating minimax updates on mini-batches sampled from ``joint``."""
    model = TinyModel(joint, cfg)
    P = model.players
    rng = rng_for(cfg.seed, "tiny-batches", joint.name)
    for _ in range(cfg.outer_iters):
        xb, yb, zb, vb = _sample(joint, rng, cfg.batch)
        out = model.forward(xb)
        _, _, g = nnet.xent_loss(out["p"], yb)
        _, dw, db = nnet.dense_backward(g, out["c_p"])
        _step(P["p"], (dw, db), cfg.lr)
        for _ in range(cfg.inner_loops):
            out = model.forward(xb)
            _, _, g_p = nnet.xent_loss(out["p"], yb)
            d_rep, _, _ = nnet.dense_backward(g_p, out["c_p"])
            n_rep = out["rep"].shape[1]
            adv = {}
            for k, labels in (("d", zb), ("c", vb)):
                _, _, g_k = nnet.xent_loss(out[k], labels)
                d_o, dw, db = nnet.dense_backward(g_k, out[f"c_{k}"])
                adv[k] = d_o[:, :n_rep]
                _step(P[k], (dw, db), cfg.lr)
            d_rep = d_rep - cfg.alpha * adv["d"] - cfg.beta * adv["c"]
            d_rep = nnet.sigmoid_backward(d_rep, out["c_s"])
            _, dw, db = nnet.dense_backward(d_rep, out["c_e"])
            _step(P["e"], (dw, db), cfg.lr_e)
    return model


@dataclass
class GradientReport:
    joint: str
    losses: dict
    targets: dict
    tol: float

    @property
    def errors(self) -> dict:
        return {k: abs(self.losses[k] - self.targets[k]) for k in self.targets}

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def to_json(self) -> dict:
        return {"joint": self.joint, "losses": self.losses, "targets": self.targets,
                "errors": self.errors, "tol": self.tol, "pass": self.passed}


def equilibrium_targets(joint: TabularJoint) -> dict[str, float]:
    """H(y|x), H(z|q_y(.|x)), H(v|q_y(.|x))."""
    post = joint.posterior_y()
    return {
        "L_P": conditional_entropy(joint.joint_with("y"), np.eye(joint.n_x)),
        "L_D": conditional_entropy(joint.joint_with("z"), post),
        "L_C": conditional_entropy(joint.joint_with("v"), post),
    }


def gradient_training_vs_oracle(joint: TabularJoint, cfg: TinyConfig | None = None,
                                tol: float = 0.05) -> GradientReport:
    cfg = cfg or TinyConfig()
    model = train_tiny(joint, cfg)
    return GradientReport(joint.name, model.population_losses(joint), equilibrium_targets(joint), tol)


# ---------------------------------------------------------------- built-in joints

def _binary_entropy(p: float) -> float:
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


def _solve_binary_entropy(target: float) -> float:
    lo, hi = 1e-9, 0.5
    for _ in range(200):
        mid = (lo + hi) / 2
        if _binary_entropy(mid) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def builtin_joints() -> list[TabularJoint]:
    joints = []

    # six x values in two posterior groups; z is tied to the position inside a group
    a = _solve_binary_entropy(0.3250)
    pz = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]] * 2
    pv = [[0.7, 0.3], [0.3, 0.7], [0.5, 0.5], [0.3, 0.7], [0.7, 0.3], [0.5, 0.5]]
    joints.append(TabularJoint.from_conditionals(np.full(6, 1 / 6), [a] * 3 + [1 - a] * 3,
                                                 pz, pv, name="nuisance_within_groups"))

    # motion and environment partly predictive of the label
    joints.append(TabularJoint.from_conditionals(
        [0.3, 0.2, 0.25, 0.25], [0.85, 0.85, 0.2, 0.2],
        [[0.6, 0.4], [0.2, 0.8], [0.5, 0.5], [0.5, 0.5]],
        [[0.5, 0.3, 0.2], [0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.3, 0.1, 0.6]],
        name="label_correlated_nuisance"))

    # label is a deterministic function of x
    joints.append(TabularJoint.from_conditionals(
        [0.25, 0.25, 0.25, 0.25], [1.0, 1.0, 0.0, 0.0],
        [[0.9, 0.1], [0.1, 0.9], [0.9, 0.1], [0.1, 0.9]],
        [[0.5, 0.5], [0.5, 0.5], [0.8, 0.2], [0.2, 0.8]],
        name="deterministic_label"))

    # generic joint with no conditional independence structure
    rng = rng_for(2024, "random-joint")
    q = rng.uniform(0.2, 1.0, size=(4, 2, 2, 2))
    joints.append(TabularJoint(q / q.sum(), name="random_4point"))
    return joints


def write_joint(joint: TabularJoint, path: Path):
    Path(path).write_text(json.dumps(joint.to_json(), indent=1) + "\n")


def read_joints(path: Path) -> list[TabularJoint]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed joint file: {exc}") from exc
    items = obj if isinstance(obj, list) else [obj]
    return [TabularJoint.from_json(o) for o in items]
