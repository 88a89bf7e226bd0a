"""Signal-processing primitives: windowed-sinc FIR design, zero-delay
filtering, one-sided FFT magnitudes and per-chunk moment statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FS = 500.0
DEFAULT_TAPS = 501

LOW_PASS = "low-pass"
BAND_PASS = "band-pass"
HIGH_PASS = "high-pass"
BANDS = (LOW_PASS, BAND_PASS, HIGH_PASS)


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float = FS

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FilterKernel:
    taps: np.ndarray
    band: str
    cutoffs: tuple[float, ...]
    fs: float = FS

    def response(self, freq_hz) -> np.ndarray:
        """Magnitude of the kernel's DTFT at the given frequencies."""
        freq_hz = np.atleast_1d(np.asarray(freq_hz, dtype=np.float64))
        n = np.arange(len(self.taps))
        phase = -2j * np.pi * np.outer(freq_hz / self.fs, n)
        return np.abs(np.exp(phase) @ self.taps)


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    bin_width: float

    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.magnitudes)) * self.bin_width


def _lowpass_taps(cutoff_hz: float, taps: int, fs: float) -> np.ndarray:
    fc = cutoff_hz / fs
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(taps)
    return h / h.sum()


def design_fir(band: str, low_hz: float | None = None, high_hz: float | None = None,
               taps: int = DEFAULT_TAPS, fs: float = FS) -> FilterKernel:
    """Hamming-windowed sinc kernel.

    A low-pass kernel uses ``low_hz`` as its cutoff, a high-pass kernel uses
    ``high_hz``, and a band-pass kernel passes ``[low_hz, high_hz]``. All
    kernels are built from the same unit-DC low-pass prototypes, so the
    low, band and high outputs of one cutoff pair sum back to the input.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"tap count must be odd, got {taps}")
    nyq = fs / 2
    if band == LOW_PASS:
        if low_hz is None or not 0 < low_hz < nyq:
            raise ValueError(f"low-pass cutoff must lie in (0, {nyq}) Hz")
        h = _lowpass_taps(low_hz, taps, fs)
        cutoffs = (low_hz,)
    elif band == HIGH_PASS:
        if high_hz is None or not 0 < high_hz < nyq:
            raise ValueError(f"high-pass cutoff must lie in (0, {nyq}) Hz")
        h = -_lowpass_taps(high_hz, taps, fs)
        h[(taps - 1) // 2] += 1.0
        cutoffs = (high_hz,)
    elif band == BAND_PASS:
        if low_hz is None or high_hz is None or not 0 < low_hz < high_hz < nyq:
            raise ValueError(
                f"band-pass cutoffs must satisfy 0 < low < high < {nyq} Hz, "
                f"got low={low_hz}, high={high_hz}")
        h = _lowpass_taps(high_hz, taps, fs) - _lowpass_taps(low_hz, taps, fs)
        cutoffs = (low_hz, high_hz)
    else:
        raise ValueError(f"unknown band kind {band!r}")
    # exact symmetry, independent of floating-point noise in the window
    h = 0.5 * (h + h[::-1])
    return FilterKernel(taps=h, band=band, cutoffs=cutoffs, fs=fs)


def apply_filter(signal: Signal | np.ndarray, kernel: FilterKernel) -> np.ndarray:
    """Zero-delay filtering: reflect-pad by the group delay, convolve, keep the
    centred part. Output has the input's length."""
    x = signal.samples if isinstance(signal, Signal) else np.asarray(signal, dtype=np.float64)
    n_taps = len(kernel.taps)
    if len(x) < n_taps:
        raise ValueError(f"signal length {len(x)} is shorter than kernel length {n_taps}")
    delay = (n_taps - 1) // 2
    padded = np.pad(x, delay, mode="reflect")
    return np.convolve(padded, kernel.taps, mode="valid")


def fft_magnitude(window: Signal | np.ndarray, fft_size: int = 1000,
                  fs: float = FS) -> Spectrum:
    x = window.samples if isinstance(window, Signal) else np.asarray(window, dtype=np.float64)
    if len(x) != fft_size:
        raise ValueError(f"window length {len(x)} does not match fft_size {fft_size}")
    return Spectrum(magnitudes=np.abs(np.fft.rfft(x)), bin_width=fs / fft_size)


def stats6(chunk: Sequence[float]) -> tuple[float, float, float, float, float, float]:
    """(max, min, median, variance, kurtosis, skewness) of a chunk.

    Population moments; kurtosis is the non-excess standardized fourth
    moment. Kurtosis and skewness are 0 when the variance is below 1e-12.
    """
    x = np.asarray(chunk, dtype=np.float64)
    if x.size == 0:
        raise ValueError("stats6 needs a non-empty chunk")
    d = x - x.mean()
    var = float(np.mean(d * d))
    if var < 1e-12:
        kurt = skew = 0.0
    else:
        kurt = float(np.mean(d ** 4) / var ** 2)
        skew = float(np.mean(d ** 3) / var ** 1.5)
    return float(x.max()), float(x.min()), float(np.median(x)), var, kurt, skew


def stats6_rows(chunks: np.ndarray) -> np.ndarray:
    """Vectorised ``stats6`` over the rows of a 2-D array; returns (n, 6)."""
    x = np.asarray(chunks, dtype=np.float64)
    d = x - x.mean(axis=1, keepdims=True)
    var = np.mean(d * d, axis=1)
    ok = var >= 1e-12
    safe = np.where(ok, var, 1.0)
    kurt = np.where(ok, np.mean(d ** 4, axis=1) / safe ** 2, 0.0)
    skew = np.where(ok, np.mean(d ** 3, axis=1) / safe ** 1.5, 0.0)
    return np.column_stack([x.max(axis=1), x.min(axis=1), np.median(x, axis=1),
                            var, kurt, skew])


def band_energy_fraction(x: np.ndarray, fs: float = FS, above_hz: float = 15.0) -> float:
    """Share of the mean-removed signal's energy above ``above_hz``."""
    x = np.asarray(x, dtype=np.float64)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[freqs > above_hz].sum() / total)
