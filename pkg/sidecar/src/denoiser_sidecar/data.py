"""Synthetic harmonic dataset for the toy denoiser.

Signals are sums of partials with per-octave amplitude decay under an
attack/decay envelope, normalized per signal to a fixed standard deviation.
The decaying partial amplitudes give the dataset the frequency-decaying
average spectrum that warm-initialized bandwidth extension exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ToyDatasetSpec:
    n_signals: int = 1024
    length: int = 8192
    sample_rate: int = 22050
    f0_range: tuple[float, float] = (150.0, 600.0)
    max_partials: int = 18
    partial_decay_db_oct: float = -6.0
    sigma_data: float = 0.07
    seed: int = 0


def generate(spec: ToyDatasetSpec) -> np.ndarray:
    """(n_signals, length) float32 array of normalized harmonic signals."""
    gen = np.random.default_rng(spec.seed)
    t = np.arange(spec.length) / spec.sample_rate
    nyquist = spec.sample_rate / 2.0
    out = np.empty((spec.n_signals, spec.length), dtype=np.float32)
    for i in range(spec.n_signals):
        f0 = gen.uniform(*spec.f0_range)
        n_partials = int(min(spec.max_partials, (nyquist - 1.0) // f0))
        signal = np.zeros(spec.length)
        for k in range(1, n_partials + 1):
            fk = k * f0
            octaves = np.log2(fk / f0)
            amp = 10.0 ** (spec.partial_decay_db_oct * octaves / 20.0)
            amp *= gen.uniform(0.7, 1.3)
            signal += amp * np.sin(2.0 * np.pi * fk * t + gen.uniform(0, 2 * np.pi))
        envelope = np.exp(-t / gen.uniform(0.05, 0.4)) * (1.0 - np.exp(-t / 0.005))
        signal *= envelope
        signal *= spec.sigma_data / max(float(signal.std()), 1e-12)
        out[i] = signal
    return out


def average_spectral_slope(signals: np.ndarray, sample_rate: int) -> float:
    """Fitted slope of mean log-power vs log-frequency; negative means the
    dataset's energy decays with frequency."""
    power = np.mean(np.abs(np.fft.rfft(signals.astype(np.float64), axis=1)) ** 2, axis=0)
    freqs = np.fft.rfftfreq(signals.shape[1], d=1.0 / sample_rate)
    keep = freqs > 50.0
    slope = np.polyfit(np.log(freqs[keep]), np.log(power[keep] + 1e-30), 1)[0]
    return float(slope)
