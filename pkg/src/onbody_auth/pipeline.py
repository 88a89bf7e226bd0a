"""Experiment configuration and the simulate / featurize / train / evaluate stages.

Each stage has an in-memory form used by tests and a file-backed form used
by the command line. All randomness comes from the experiment seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .adversarial.model import AdversarialModel
from .adversarial.training import TrainConfig, TrainResult, train, write_history
from .channel import (OFF, ON, CellCount, EnvironmentClass, MotionClass, RssTrace, gen_dataset,
                      grid_counts, read_manifest, read_trace, write_manifest, write_trace)
from .profile import (Normalizer, PropagationProfile, normalizer_fit, read_profiles, stack,
                      trace_profiles, write_profiles)
from .seeding import rng_for

U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class DatasetSpec:
    """Traces per (y, z, v) cell: ``per_cell`` for each controlled motion and
    ``uncontrolled_per_cell`` for the uncontrolled one."""

    per_cell: int = 16
    uncontrolled_per_cell: int = 20
    duration_s: float = 60.0

    def counts(self) -> list[CellCount]:
        counts = grid_counts(self.per_cell)
        if self.uncontrolled_per_cell:
            counts += grid_counts(self.uncontrolled_per_cell, motions=(MotionClass.UNCONTROLLED,))
        return counts

    @property
    def n_traces(self) -> int:
        return sum(c.count for c in self.counts())


@dataclass(frozen=True)
class ProtocolSpec:
    verifier: str = "oracle"
    scenario: str = "spoofing"
    timeout: float | None = None
    k_segments: int = 1
    threshold_cutoff: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train_fraction: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float = 0.5
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= U64_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", TrainConfig(**{**asdict(self.train), "seed": self.seed}))

    @classmethod
    def from_json(cls, obj: dict, seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValueError("config must be a JSON object")
        known = {"seed", "dataset", "train_fraction", "train", "threshold", "protocol"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        seed = obj.get("seed") if seed is None else seed
        if seed is None:
            raise ValueError("config needs a seed")
        try:
            return cls(
                seed=seed,
                dataset=DatasetSpec(**obj.get("dataset", {})),
                train_fraction=obj.get("train_fraction", 0.8),
                train=TrainConfig(**{**obj.get("train", {}), "seed": seed}),
                threshold=obj.get("threshold", 0.5),
                protocol=ProtocolSpec(**obj.get("protocol", {})),
            )
        except TypeError as exc:
            raise ValueError(f"bad config: {exc}") from None

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- in-memory stages

def simulate(cfg: ExperimentConfig) -> list[RssTrace]:
    return gen_dataset(cfg.dataset.counts(), cfg.seed, cfg.dataset.duration_s)


def split_traces(labels: Sequence[tuple[int, int, int]], seed: int, train_fraction: float):
    """Trace indices for training and testing.

    Controlled traces are split per (y, z, v) cell so every cell keeps the
    same train share; uncontrolled traces always go to the test side.
    Whole traces are assigned, so no two segments of one recording straddle
    the split.
    """
    cells: dict[tuple[int, int, int], list[int]] = {}
    test = []
    for i, (y, z, v) in enumerate(labels):
        if z == MotionClass.UNCONTROLLED:
            test.append(i)
        else:
            cells.setdefault((y, z, v), []).append(i)
    rng = rng_for(seed, "split")
    train_idx = []
    for key in sorted(cells):
        members = np.array(cells[key])
        members = members[rng.permutation(len(members))]
        k = int(round(train_fraction * len(members)))
        train_idx.extend(members[:k].tolist())
        test.extend(members[k:].tolist())
    return sorted(train_idx), sorted(test)


def featurize(traces: Sequence[RssTrace], seed: int, train_fraction: float):
    """Profiles for both splits and a normaliser fit on the training split only."""
    train_idx, test_idx = split_traces([(t.y, int(t.z), int(t.v)) for t in traces], seed, train_fraction)
    train_profiles = [p for i in train_idx for p in trace_profiles(traces[i])]
    test_profiles = [p for i in test_idx for p in trace_profiles(traces[i])]
    if not train_profiles:
        raise ValueError("training split is empty")
    return train_profiles, test_profiles, normalizer_fit(train_profiles)


def train_profiles(profiles: Sequence[PropagationProfile], norm: Normalizer, cfg: TrainConfig,
                   progress=None) -> TrainResult:
    X, y, z, v = stack(profiles)
    if (z >= len(MotionClass) - 1).any():
        raise ValueError("training profiles must come from controlled motions only")
    return train(norm.apply(X), y, z, v, cfg, progress=progress)


def score(model: AdversarialModel, norm: Normalizer, profiles: Sequence[PropagationProfile]):
    X, y, z, v = stack(profiles)
    probs = model.predict_proba(norm.apply(X))
    return ev.records_from_arrays(probs[:, 1], y, z, v)


def evaluation_report(records: Sequence[ev.PredictionRecord], threshold: float = 0.5) -> dict:
    """Metrics JSON plus the ROC curve; controlled and uncontrolled motion
    scenarios are also reported separately."""
    m = ev.metrics(records, threshold)
    curve = ev.roc(records)
    report = ev.metrics_json(m, ev.auroc(curve))
    by_scenario = {}
    for name, keep in (("controlled", lambda r: r.z != MotionClass.UNCONTROLLED),
                       ("uncontrolled", lambda r: r.z == MotionClass.UNCONTROLLED)):
        group = [r for r in records if keep(r)]
        if group:
            by_scenario[name] = ev.rates(group, threshold).to_json()
    report["by_scenario"] = by_scenario
    report["threshold"] = threshold
    return report, curve, m


# ---------------------------------------------------------------- file-backed stages

def write_dataset(traces: Sequence[RssTrace], out_dir: Path) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [write_trace(t, out_dir / f"trace_{i:05d}.csv") for i, t in enumerate(traces)]
    write_manifest(entries, out_dir / "manifest.json")
    return entries


def load_dataset(manifest_path: Path) -> list[RssTrace]:
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"manifest {manifest_path} lists no traces")
    return [read_trace(manifest_path.parent / e["csv"], {k: e[k] for k in ("y", "z", "v", "seed", "fs")})
            for e in entries]


def cell_table(traces: Sequence[RssTrace]) -> list[tuple[str, str, str, int]]:
    counts: dict[tuple[int, int, int], int] = {}
    for t in traces:
        key = (t.y, int(t.z), int(t.v))
        counts[key] = counts.get(key, 0) + 1
    return [("on" if y == ON else "off", MotionClass(z).label, EnvironmentClass(v).label, n)
            for (y, z, v), n in sorted(counts.items(), key=lambda kv: (-kv[0][0], kv[0][1], kv[0][2]))]


def write_featurized(train_p, test_p, norm: Normalizer, out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_profiles(train_p, out_dir / "train.jsonl")
    write_profiles(test_p, out_dir / "test.jsonl")
    (out_dir / "normalizer.json").write_text(json.dumps(norm.to_json()) + "\n")


def load_normalizer(path: Path) -> Normalizer:
    return Normalizer.from_json(json.loads(Path(path).read_text()))


def save_trained(result: TrainResult, norm: Normalizer, cfg: TrainConfig, out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.model.save(out_dir / "checkpoint.json",
                      extra={"normalizer": norm.to_json(), "train_config": cfg.to_json()})
    write_history(result.history, out_dir / "history.json")


def load_trained(path: Path) -> tuple[AdversarialModel, Normalizer]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    model, extra = AdversarialModel.load(path)
    if "normalizer" not in extra:
        raise ValueError(f"checkpoint {path} carries no normalizer")
    return model, Normalizer.from_json(extra["normalizer"])


def write_evaluation(report: dict, curve, m: dict, out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ev.write_metrics_json(report, out_dir / "metrics.json")
    ev.write_roc_csv(curve, out_dir / "roc.csv")
    (out_dir / "roc.svg").write_text(ev.roc_svg(curve, report["auroc"]))
    (out_dir / "by_motion.svg").write_text(ev.bars_svg(m["by_motion"], "Rates by motion"))
    (out_dir / "by_environment.svg").write_text(ev.bars_svg(m["by_environment"], "Rates by environment"))


def read_split(path: Path) -> list[PropagationProfile]:
    profiles = read_profiles(path)
    if not profiles:
        raise ValueError(f"{path} holds no profiles")
    return profiles
