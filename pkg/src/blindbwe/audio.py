"""Audio containers, full-signal spectra, and level utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AudioBuffer", "rms", "fft_mag", "normalize_loudness"]


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """A mono audio signal: finite float samples plus a sample rate in Hz.

    Samples are stored as an immutable float64 vector. Every operation in
    this package treats buffers as values and returns new instances, so a
    buffer can be shared freely between threads.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ValueError("audio buffer needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio buffer contains non-finite samples")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate!r}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        """New buffer holding ``samples`` at this buffer's sample rate."""
        return AudioBuffer(samples, self.sample_rate)


def _as_samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)


def rms(x) -> float:
    """Root-mean-square level, sqrt(mean(x**2))."""
    s = _as_samples(x)
    return float(np.sqrt(np.mean(np.square(s))))


def fft_mag(x: AudioBuffer) -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude spectrum of the whole signal.

    Uses the unnormalized forward DFT (inverse carries the 1/N), so Parseval
    reads sum(|X|^2) over the full spectrum = N * sum(x^2). Returns
    ``(freqs_hz, magnitudes)`` with floor(N/2)+1 entries each.
    """
    s = _as_samples(x)
    mags = np.abs(np.fft.rfft(s))
    freqs = np.fft.rfftfreq(s.size, d=1.0 / x.sample_rate)
    return freqs, mags


def normalize_loudness(x: AudioBuffer, sigma_data: float) -> tuple[AudioBuffer, float]:
    """Scale a signal so its standard deviation equals ``sigma_data``.

    Returns the scaled buffer and the gain that was applied; dividing a
    restored output by the gain undoes the normalization. Raises
    ``ValueError("silent input")`` when the input has zero variance.
    """
    if not np.isfinite(sigma_data) or sigma_data <= 0:
        raise ValueError("sigma_data must be a positive finite number")
    std = float(np.std(x.samples))
    if std == 0.0:
        raise ValueError("silent input")
    gain = sigma_data / std
    return x.with_samples(x.samples * gain), gain
