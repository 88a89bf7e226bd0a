"""Synthetic on-body / off-body RSS traces.

On-body links follow the creeping-wave field model: the field magnitude
falls as 1/d and is scaled by a surface attenuation factor whose trajectory
is driven by the wearer's motion. Off-body links are LOS-dominated: log-distance
path loss over an attacker random walk, log-normal shadowing and Rician
small-scale fading whose phase advances with the distance walked.

All absolute levels are simulator conventions; only relative behaviour
(stability, variance ordering, spectral occupancy) is meant to be realistic.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import FS, Signal
from .seeding import derive_seed, rng_for

WAVELENGTH_M = 299_792_458.0 / 2.44e9
ETA0 = 376.730313668
RSS_FLOOR_DBM = -110.0
RSS_CEIL_DBM = -20.0
MIN_DURATION_S = 5.0


class MotionClass(enum.IntEnum):
    SITTING = 0
    STANDING = 1
    ARM_MOVING = 2
    ROTATING = 3
    WALKING = 4
    UNCONTROLLED = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def is_static(self) -> bool:
        return self in (MotionClass.SITTING, MotionClass.STANDING)

    @classmethod
    def parse(cls, value) -> "MotionClass":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


CONTROLLED_MOTIONS = tuple(m for m in MotionClass if m != MotionClass.UNCONTROLLED)


class EnvironmentClass(enum.IntEnum):
    LABORATORY = 0
    OFFICE = 1
    CORRIDOR = 2
    ROOFTOP = 3
    PARK = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def indoor(self) -> bool:
        return self <= EnvironmentClass.CORRIDOR

    @property
    def k_factor(self) -> float:
        return _K_FACTOR[self]

    @property
    def noise_floor_dbm(self) -> float:
        return -90.0 if self.indoor else -95.0

    @property
    def shadowing_db(self) -> float:
        return 4.0 if self.indoor else 2.0

    @classmethod
    def parse(cls, value) -> "EnvironmentClass":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


_K_FACTOR = {
    EnvironmentClass.CORRIDOR: 1.0,
    EnvironmentClass.LABORATORY: 2.0,
    EnvironmentClass.OFFICE: 3.0,
    EnvironmentClass.ROOFTOP: 6.0,
    EnvironmentClass.PARK: 8.0,
}

ON = 1
OFF = 0


@dataclass(frozen=True)
class CreepingWaveParams:
    """Geometry and radio constants of the field model (SI units)."""

    d: float = 0.4
    eta: float = ETA0
    p_tx: float = 0.01
    g_tx: float = 1.0
    k: float = 2 * math.pi / WAVELENGTH_M
    a: float = 0.16
    b: float = 0.11
    phi: float = 0.0
    varphi: float = math.pi / 2

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("surface distance d must be positive")
        if self.p_tx <= 0:
            raise ValueError("transmit power must be positive")
        if not self.a >= self.b > 0:
            raise ValueError("ellipse axes must satisfy a >= b > 0")


def creeping_field_magnitude(p: CreepingWaveParams, attenuation):
    """|E| over the body surface; ``attenuation`` plays the role of |L(a, b, phi, varphi)|."""
    if p.d <= 0 or p.p_tx <= 0:
        raise ValueError("d and p_tx must be positive")
    att = np.asarray(attenuation, dtype=np.float64)
    if np.any(att <= 0) or np.any(att > 1):
        raise ValueError("attenuation must lie in (0, 1]")
    mag = 2.0 * math.sqrt(p.eta / (2 * math.pi)) * math.sqrt(p.p_tx * p.g_tx) / p.d * att
    return float(mag) if mag.ndim == 0 else mag


def field_to_power_w(e_mag, eta: float = ETA0, wavelength: float = WAVELENGTH_M):
    """Power collected by an isotropic receive aperture from a field of peak magnitude ``e_mag``."""
    aperture = wavelength ** 2 / (4 * math.pi)
    return np.asarray(e_mag) ** 2 / (2 * eta) * aperture


def _bandlimited_noise(rng: np.random.Generator, n: int, fs: float, lo: float, hi: float) -> np.ndarray:
    """Unit-RMS Gaussian noise with its spectrum confined to [lo, hi] Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def _ar1(rng: np.random.Generator, n: int, fs: float, tau_s: float) -> np.ndarray:
    """Unit-variance Ornstein-Uhlenbeck samples with correlation time ``tau_s``."""
    a = math.exp(-1.0 / (fs * tau_s))
    w = rng.standard_normal(n) * math.sqrt(1 - a * a)
    x0 = rng.standard_normal()
    y, _ = lfilter([1.0], [1.0, -a], w, zi=[a * x0])
    return y


# per-motion shape of the periodic body-induced loss modulation:
# (fundamental Hz, harmonic amplitudes in dB, jitter RMS dB)
_DYNAMIC = {
    MotionClass.ARM_MOVING: (1.0, (3.6, 1.6, 0.6), 1.2),
    MotionClass.ROTATING: (0.5, (5.0, 1.5, 0.8), 1.0),
    MotionClass.WALKING: (2.0, (3.8, 1.9, 0.9), 1.5),
}
# (breathing amplitude dB, drift RMS dB)
_STATIC = {
    MotionClass.SITTING: (0.12, 0.10),
    MotionClass.STANDING: (0.18, 0.15),
}
# speed of the body parts carrying the antennas, m/s; drives on-body multipath Doppler
_BODY_SPEED = {
    MotionClass.SITTING: 0.0,
    MotionClass.STANDING: 0.0,
    MotionClass.ARM_MOVING: 0.6,
    MotionClass.ROTATING: 0.5,
    MotionClass.WALKING: 1.2,
}


def _controlled_modulation_db(z: MotionClass, n: int, fs: float,
                              rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    if z.is_static:
        breath_amp, drift_rms = _STATIC[z]
        f_breath = rng.uniform(0.2, 0.35)
        breath = breath_amp * np.sin(2 * np.pi * f_breath * t + rng.uniform(0, 2 * np.pi))
        drift = drift_rms * _bandlimited_noise(rng, n, fs, 0.0, 0.3)
        return breath + drift
    f0, harmonics, jitter_rms = _DYNAMIC[z]
    f0 = f0 * rng.uniform(0.95, 1.05)
    periodic = np.zeros(n)
    for h, amp in enumerate(harmonics, start=1):
        periodic += amp * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    jitter = jitter_rms * _bandlimited_noise(rng, n, fs, 0.5, 15.0)
    return periodic + jitter


def _uncontrolled_schedule(n: int, fs: float, rng: np.random.Generator) -> list[tuple[int, int, MotionClass]]:
    pieces = []
    start = 0
    while start < n:
        length = int(round(rng.uniform(5.0, 15.0) * fs))
        z = CONTROLLED_MOTIONS[int(rng.integers(len(CONTROLLED_MOTIONS)))]
        pieces.append((start, min(n, start + length), z))
        start += length
    return pieces


def _splice(parts: list[np.ndarray], schedule, fs: float, fade_s: float = 0.25) -> np.ndarray:
    """Join per-piece generator outputs with short linear cross-fades."""
    n = schedule[-1][1]
    out = np.zeros(n)
    fade = int(fade_s * fs)
    for i, (lo, hi, _) in enumerate(schedule):
        out[lo:hi] = parts[i][lo:hi]
        if i > 0 and fade > 0:
            f_hi = min(hi, lo + fade)
            w = np.linspace(0.0, 1.0, f_hi - lo, endpoint=False)
            out[lo:f_hi] = (1 - w) * parts[i - 1][lo:f_hi] + w * parts[i][lo:f_hi]
    return out


def motion_modulation_db(z: MotionClass, n: int, fs: float, seed: int) -> np.ndarray:
    """Zero-centred body-induced loss modulation (dB) for ``n`` samples."""
    z = MotionClass.parse(z)
    if z != MotionClass.UNCONTROLLED:
        return _controlled_modulation_db(z, n, fs, rng_for(seed, "motion", int(z)))
    rng = rng_for(seed, "motion-schedule")
    schedule = _uncontrolled_schedule(n, fs, rng)
    parts = [_controlled_modulation_db(zi, n, fs, rng_for(seed, "motion-piece", i))
             for i, (_, _, zi) in enumerate(schedule)]
    return _splice(parts, schedule, fs)


def motion_speed(z: MotionClass, n: int, fs: float, seed: int) -> np.ndarray:
    z = MotionClass.parse(z)
    if z != MotionClass.UNCONTROLLED:
        return np.full(n, _BODY_SPEED[z])
    schedule = _uncontrolled_schedule(n, fs, rng_for(seed, "motion-schedule"))
    speed = np.empty(n)
    for lo, hi, zi in schedule:
        speed[lo:hi] = _BODY_SPEED[zi]
    return speed


def attenuation_model(z: MotionClass, t, seed: int, mean_loss_db: float = 20.0) -> np.ndarray:
    """Surface attenuation factor in (0, 1] over the uniformly sampled times ``t``.

    ``mean_loss_db`` is the average surface loss; the motion adds a
    modulation on top of it in dB.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size and t[0] < 0:
        raise ValueError("time must be non-negative")
    n = t.size
    fs = 1.0 / (t[1] - t[0]) if n > 1 else FS
    att_db = -mean_loss_db + motion_modulation_db(z, n, fs, seed)
    att_db = np.clip(att_db, -60.0, 0.0)
    return 10.0 ** (att_db / 20.0)


def _sos_fading(k_factor: float, path_m: np.ndarray, los_path_m: np.ndarray,
                rng: np.random.Generator, n_paths: int = 16) -> np.ndarray:
    """Rician complex gain (unit mean power) from a sum of scattered plane waves.

    Scattered phases advance with the walked path length, the LOS phase with
    the radial distance, so the Doppler follows the actual motion.
    """
    k = 2 * np.pi / WAVELENGTH_M
    angles = rng.uniform(0, 2 * np.pi, n_paths)
    phases = rng.uniform(0, 2 * np.pi, n_paths)
    scatter = np.zeros(path_m.size, dtype=np.complex128)
    for a, p in zip(angles, phases):
        scatter += np.exp(1j * (k * math.cos(a) * path_m + p))
    scatter /= math.sqrt(n_paths)
    los = np.exp(-1j * (k * los_path_m + rng.uniform(0, 2 * np.pi)))
    return math.sqrt(k_factor / (k_factor + 1)) * los + math.sqrt(1 / (k_factor + 1)) * scatter


def _to_rss_dbm(power_w: np.ndarray, gain: np.ndarray, noise_floor_dbm: float,
                rng: np.random.Generator) -> np.ndarray:
    noise_w = 10 ** ((noise_floor_dbm - 30) / 10)
    n = power_w.size
    noise = math.sqrt(noise_w / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    received = np.sqrt(power_w) * gain + noise
    rss = 10 * np.log10(np.abs(received) ** 2) + 30
    return np.clip(rss, RSS_FLOOR_DBM, RSS_CEIL_DBM)


@dataclass(frozen=True)
class RssTrace:
    signal: Signal
    y: int
    z: MotionClass
    v: EnvironmentClass
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def rss(self) -> np.ndarray:
        return self.signal.samples

    @property
    def fs(self) -> float:
        return self.signal.sample_rate

    def __len__(self) -> int:
        return len(self.signal)


def _check_duration(duration: float):
    if duration < MIN_DURATION_S:
        raise ValueError(f"duration {duration} s is shorter than one {MIN_DURATION_S:g} s segment")


def gen_onbody_trace(z, v, duration: float = 60.0, seed: int = 0, fs: float = FS,
                     params: CreepingWaveParams | None = None) -> RssTrace:
    _check_duration(duration)
    z, v = MotionClass.parse(z), EnvironmentClass.parse(v)
    params = params or CreepingWaveParams()
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    # surface loss grows with d so the overall power decay is d^-4 (1/d field from the model, 1/d from L)
    mean_loss = 20.0 * math.log10(params.d / 0.04)
    att = attenuation_model(z, t, seed, mean_loss_db=mean_loss)
    power = field_to_power_w(creeping_field_magnitude(params, att), params.eta)

    rng = rng_for(seed, "onbody-fading")
    speed = motion_speed(z, n, fs, seed)
    path = np.cumsum(speed) / fs
    # weak environmental multipath seen by a moving body; the creeping wave dominates
    k_on = 20.0 * (1.0 + v.k_factor)
    gain = _sos_fading(k_on, path, np.zeros(n), rng)
    rss = _to_rss_dbm(power, gain, v.noise_floor_dbm, rng_for(seed, "onbody-noise"))
    return RssTrace(Signal(rss, fs), ON, z, v, seed)


def attacker_walk(n: int, fs: float, rng: np.random.Generator,
                  distance_range=(1.0, 5.0), max_speed: float = 1.5):
    """Attacker radial distance D(t) confined to ``distance_range`` and the walked path length."""
    lo, hi = distance_range
    mean_speed = rng.uniform(0.1, 0.9) * max_speed
    speed = np.clip(mean_speed * (1 + 0.4 * _ar1(rng, n, fs, 3.0)), 0.0, max_speed)
    heading = rng.uniform(0, 2 * np.pi) + np.cumsum(rng.standard_normal(n)) * math.sqrt(0.5 / fs)
    radial = speed * np.cos(heading)
    raw = rng.uniform(lo, hi) - lo + np.cumsum(radial) / fs
    span = hi - lo
    folded = np.mod(raw, 2 * span)
    distance = lo + np.where(folded > span, 2 * span - folded, folded)
    path = np.cumsum(speed) / fs
    return distance, path, mean_speed


def gen_offbody_trace(v, attacker_distance_range=(1.0, 5.0), duration: float = 60.0,
                      seed: int = 0, z=MotionClass.WALKING, fs: float = FS,
                      p_tx_w: float = 0.001, path_loss_exponent: float = 2.0,
                      body_coupling: float = 0.3) -> RssTrace:
    """Off-body trace received on the wearer's body from a freely walking attacker.

    ``z`` is the receiver wearer's motion; it reaches the link only through a
    weak body-shadowing term scaled by ``body_coupling``.
    """
    _check_duration(duration)
    z, v = MotionClass.parse(z), EnvironmentClass.parse(v)
    n = int(round(duration * fs))
    rng = rng_for(seed, "offbody")
    distance, path, mean_speed = attacker_walk(n, fs, rng, attacker_distance_range)

    pl0 = 20 * math.log10(4 * math.pi / WAVELENGTH_M)
    path_loss_db = pl0 + 10 * path_loss_exponent * np.log10(distance)
    # shadowing decorrelates over roughly one metre of walking
    tau = 1.0 / max(mean_speed, 0.05)
    shadow_db = v.shadowing_db * _ar1(rng, n, fs, tau)
    body_db = body_coupling * motion_modulation_db(z, n, fs, seed)
    rx_dbm = 10 * math.log10(p_tx_w * 1e3) - path_loss_db + shadow_db + body_db
    power = 10 ** ((rx_dbm - 30) / 10)
    gain = _sos_fading(v.k_factor, path, distance, rng_for(seed, "offbody-fading"))
    rss = _to_rss_dbm(power, gain, v.noise_floor_dbm, rng_for(seed, "offbody-noise"))
    return RssTrace(Signal(rss, fs), OFF, z, v, seed, meta={"attacker_speed": mean_speed})


@dataclass(frozen=True)
class CellCount:
    y: int
    z: MotionClass
    v: EnvironmentClass
    count: int


def grid_counts(per_cell: int, motions=CONTROLLED_MOTIONS, environments=tuple(EnvironmentClass),
                classes=(ON, OFF)) -> list[CellCount]:
    return [CellCount(y, MotionClass.parse(z), EnvironmentClass.parse(v), per_cell)
            for y in classes for z in motions for v in environments]


def gen_dataset(counts: list[CellCount], seed: int, duration: float = 60.0,
                fs: float = FS) -> list[RssTrace]:
    """Generate every requested (y, z, v) cell; trace i gets the sub-seed (seed, i)."""
    traces = []
    index = 0
    for cell in counts:
        if cell.count < 0:
            raise ValueError("cell counts must be non-negative")
        for _ in range(cell.count):
            sub = _trace_seed(seed, index)
            if cell.y == ON:
                traces.append(gen_onbody_trace(cell.z, cell.v, duration, sub, fs))
            else:
                traces.append(gen_offbody_trace(cell.v, duration=duration, seed=sub, z=cell.z, fs=fs))
            index += 1
    return traces


def _trace_seed(seed: int, index: int) -> int:
    return derive_seed(seed, "trace", index) >> 1


# ---------------------------------------------------------------- file formats

def trace_sidecar(trace: RssTrace) -> dict:
    return {"y": int(trace.y), "z": trace.z.label, "v": trace.v.label,
            "seed": int(trace.seed), "fs": float(trace.fs)}


def write_trace(trace: RssTrace, csv_path: Path) -> dict:
    """Write ``<name>.csv`` (t_s,rss_dbm) and ``<name>.json`` sidecar; returns the manifest entry."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "rss_dbm"])
        for i, value in enumerate(trace.rss):
            w.writerow([repr(i / trace.fs), repr(float(value))])
    sidecar = trace_sidecar(trace)
    json_path = csv_path.with_suffix(".json")
    json_path.write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return {"csv": csv_path.name, "sidecar": json_path.name, **sidecar}


def read_trace(csv_path: Path, sidecar: dict | None = None) -> RssTrace:
    csv_path = Path(csv_path)
    if sidecar is None:
        sidecar = json.loads(csv_path.with_suffix(".json").read_text())
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return RssTrace(Signal(data[:, 1], float(sidecar["fs"])), int(sidecar["y"]),
                    MotionClass.parse(sidecar["z"]), EnvironmentClass.parse(sidecar["v"]),
                    int(sidecar["seed"]))


def write_manifest(entries: list[dict], path: Path):
    Path(path).write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")


def read_manifest(path: Path) -> list[dict]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON array")
    return entries
