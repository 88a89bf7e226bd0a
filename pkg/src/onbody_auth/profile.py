"""Propagation profiles: 5 s RSS segments turned into 380 features.

Layout of a profile vector::

    [0, 180)    time domain   scale (low, band, high) > chunk (10) > stat (6)
    [180, 340)  spectral matrix M, 4 windows x 40 intervals, row-major
    [340, 380)  per-interval share of total magnitude (PC)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from .channel import RssTrace
from .dsp import BAND_PASS, FS, HIGH_PASS, LOW_PASS, apply_filter, design_fir, fft_magnitude, stats6_rows

SEGMENT_SECONDS = 5.0
N_CHUNKS = 10
N_STATS = 6
N_SCALES = 3
N_TIME = N_SCALES * N_CHUNKS * N_STATS
N_WINDOWS = 4
N_INTERVALS = 40
N_FREQ = N_WINDOWS * N_INTERVALS + N_INTERVALS
N_FEATURES = N_TIME + N_FREQ
assert (N_TIME, N_FREQ, N_FEATURES) == (180, 200, 380)

LOW_CUTOFF_HZ = 0.5
HIGH_CUTOFF_HZ = 15.0
FFT_SIZE = 1000
HOP = 500

STAT_NAMES = ("max", "min", "median", "variance", "kurtosis", "skewness")
SCALE_NAMES = ("low", "band", "high")


@dataclass(frozen=True)
class RssSegment:
    samples: np.ndarray
    y: int
    z: int
    v: int


@dataclass(frozen=True)
class SpectralSummary:
    M: np.ndarray
    pc: np.ndarray


@dataclass(frozen=True)
class PropagationProfile:
    features: np.ndarray
    y: int
    z: int
    v: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.shape != (N_FEATURES,):
            raise ValueError(f"profile must have {N_FEATURES} features, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("profile contains non-finite features")
        object.__setattr__(self, "features", f)


def time_slot(scale: str, chunk: int, stat: str) -> int:
    """Index of one time-domain feature in the profile vector."""
    return (SCALE_NAMES.index(scale) * N_CHUNKS + chunk) * N_STATS + STAT_NAMES.index(stat)


def segment(trace: RssTrace, seconds: float = SEGMENT_SECONDS) -> list[RssSegment]:
    n = int(round(seconds * trace.fs))
    x = trace.rss
    if len(x) < n:
        raise ValueError(f"trace has {len(x)} samples, need at least {n} for one segment")
    return [RssSegment(x[i * n:(i + 1) * n].copy(), int(trace.y), int(trace.z), int(trace.v))
            for i in range(len(x) // n)]


@lru_cache(maxsize=None)
def _kernels(fs: float = FS):
    return (design_fir(LOW_PASS, LOW_CUTOFF_HZ, None, fs=fs),
            design_fir(BAND_PASS, LOW_CUTOFF_HZ, HIGH_CUTOFF_HZ, fs=fs),
            design_fir(HIGH_PASS, None, HIGH_CUTOFF_HZ, fs=fs))


def _samples(seg) -> np.ndarray:
    return seg.samples if isinstance(seg, RssSegment) else np.asarray(seg, dtype=np.float64)


def decompose(seg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Large-scale (< 0.5 Hz), motion (0.5-15 Hz) and small-scale (> 15 Hz) variations."""
    x = _samples(seg)
    return tuple(apply_filter(x, k) for k in _kernels())


def time_features(low, band, high) -> np.ndarray:
    out = []
    for scale in (low, band, high):
        scale = np.asarray(scale, dtype=np.float64)
        if len(scale) % N_CHUNKS:
            raise ValueError("scale length must split into ten equal chunks")
        out.append(stats6_rows(scale.reshape(N_CHUNKS, -1)).ravel())
    return np.concatenate(out)


@lru_cache(maxsize=None)
def interval_index(fft_size: int = FFT_SIZE, fs: float = FS) -> np.ndarray:
    """Interval number (0..39) of every one-sided FFT bin."""
    low_edges = np.linspace(0.0, HIGH_CUTOFF_HZ, 31)
    high_edges = np.linspace(HIGH_CUTOFF_HZ, fs / 2, 11)[1:]
    edges = np.concatenate([low_edges, high_edges])
    freqs = np.arange(fft_size // 2 + 1) * fs / fft_size
    idx = np.searchsorted(edges, freqs, side="right") - 1
    # 15 Hz closes the last low interval, Nyquist closes the last high one
    idx[freqs == HIGH_CUTOFF_HZ] = 29
    idx[freqs >= fs / 2] = N_INTERVALS - 1
    idx.setflags(write=False)
    return idx


def spectral_matrix(seg) -> SpectralSummary:
    x = _samples(seg)
    idx = interval_index()
    M = np.zeros((N_WINDOWS, N_INTERVALS))
    for w in range(N_WINDOWS):
        spec = fft_magnitude(x[w * HOP: w * HOP + FFT_SIZE], FFT_SIZE)
        M[w] = np.bincount(idx, weights=spec.magnitudes, minlength=N_INTERVALS)
    total = M.sum()
    if total > 0:
        pc = M.sum(axis=0) / total
    else:
        pc = np.full(N_INTERVALS, 1.0 / N_INTERVALS)
    return SpectralSummary(M, pc)


def freq_features(s: SpectralSummary) -> np.ndarray:
    return np.concatenate([s.M.ravel(), s.pc])


def build_profile(seg: RssSegment) -> PropagationProfile:
    feats = np.concatenate([time_features(*decompose(seg)), freq_features(spectral_matrix(seg))])
    return PropagationProfile(feats, int(seg.y), int(seg.z), int(seg.v))


def trace_profiles(trace: RssTrace) -> list[PropagationProfile]:
    return [build_profile(s) for s in segment(trace)]


def stack(profiles: Iterable[PropagationProfile]):
    """Feature matrix and label vectors (X, y, z, v) of a profile collection."""
    profiles = list(profiles)
    X = np.stack([p.features for p in profiles]) if profiles else np.zeros((0, N_FEATURES))
    labels = [np.array([getattr(p, k) for p in profiles], dtype=np.int64) for k in "yzv"]
    return (X, *labels)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": [float(m) for m in self.mean], "std": [float(s) for s in self.std]}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalizer":
        mean, std = np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise ValueError("normalizer must hold 380 means and 380 stds")
        return cls(mean, std)


def normalizer_fit(profiles, min_std: float = 1e-8) -> Normalizer:
    X = profiles if isinstance(profiles, np.ndarray) else stack(profiles)[0]
    if len(X) == 0:
        raise ValueError("cannot fit a normalizer on an empty training set")
    return Normalizer(X.mean(axis=0), np.maximum(X.std(axis=0), min_std))


def normalizer_apply(norm: Normalizer, profile: PropagationProfile) -> PropagationProfile:
    return PropagationProfile(norm.apply(profile.features), profile.y, profile.z, profile.v)


# ---------------------------------------------------------------- file formats

def write_profiles(profiles: Iterable[PropagationProfile], path: Path):
    with open(path, "w") as fh:
        for p in profiles:
            fh.write(json.dumps({"features": [float(f) for f in p.features],
                                 "y": int(p.y), "z": int(p.z), "v": int(p.v)}) + "\n")


def read_profiles(path: Path) -> list[PropagationProfile]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(PropagationProfile(np.asarray(obj["features"], dtype=np.float64),
                                              int(obj["y"]), int(obj["z"]), int(obj["v"])))
    return out
