"""Reference-based evaluation: frequency-response error, log-spectral
distance, and the low-energy failure-risk diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from blindbwe.audio import AudioBuffer, rms
from blindbwe.lowpass import FilterParams, response_gain
from blindbwe.stft import StftPlan, stft

__all__ = [
    "ResponseTable",
    "log_frequency_grid",
    "fre",
    "lsd",
    "FailureRisk",
    "failure_risk",
]

MAGNITUDE_FLOOR = 1e-6
_LSD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class ResponseTable:
    """A magnitude response sampled on a strictly increasing frequency grid.

    Magnitudes are linear scale and floored at 1e-6 so relative errors stay
    finite.
    """

    freqs_hz: np.ndarray
    magnitudes: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.freqs_hz, dtype=np.float64).reshape(-1)
        m = np.asarray(self.magnitudes, dtype=np.float64).reshape(-1)
        if f.size == 0 or f.size != m.size:
            raise ValueError("freqs and magnitudes must be equal-length, nonempty")
        if not np.all(np.isfinite(f)) or np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must be finite and strictly increasing")
        if not np.all(np.isfinite(m)):
            raise ValueError("magnitudes must be finite")
        m = np.maximum(m, MAGNITUDE_FLOOR)
        f = f.copy()
        f.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "magnitudes", m)

    @classmethod
    def from_filter(cls, phi: FilterParams, freqs_hz) -> "ResponseTable":
        freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
        return cls(freqs_hz, response_gain(phi, freqs_hz))


def log_frequency_grid(
    sample_rate: int, n_points: int = 512, f_lo: float = 20.0
) -> np.ndarray:
    """Log-spaced evaluation frequencies from f_lo up to Nyquist."""
    return np.geomspace(f_lo, sample_rate / 2.0, n_points)


def _align(h_ref: ResponseTable, h_est: ResponseTable) -> np.ndarray:
    """Estimate magnitudes on the reference grid (log-frequency interp)."""
    if h_ref.freqs_hz.size == h_est.freqs_hz.size and np.allclose(
        h_ref.freqs_hz, h_est.freqs_hz
    ):
        return h_est.magnitudes
    lo, hi = h_est.freqs_hz[0], h_est.freqs_hz[-1]
    if h_ref.freqs_hz[0] < lo * (1 - 1e-9) or h_ref.freqs_hz[-1] > hi * (1 + 1e-9):
        raise ValueError("estimate grid does not cover the reference grid")
    return np.interp(
        np.log(h_ref.freqs_hz), np.log(h_est.freqs_hz), h_est.magnitudes
    )


def fre(h_ref: ResponseTable, h_est: ResponseTable) -> float:
    """Frequency-response error in dB; lower is better.

    20*log10 of the mean relative magnitude error |H_ref - H_est| / H_ref
    over the reference grid (linear-scale responses). A perfect estimate
    yields -inf, which serializes as the string "-inf" and compares as the
    best possible score.
    """
    est = _align(h_ref, h_est)
    mean_rel = float(np.mean(np.abs(h_ref.magnitudes - est) / h_ref.magnitudes))
    if mean_rel == 0.0:
        return float("-inf")
    return float(20.0 * np.log10(mean_rel))


def lsd(reference: AudioBuffer, estimate: AudioBuffer, plan: StftPlan) -> float:
    """Log-spectral distance, frame-averaged.

    mean over frames of sqrt(mean over bins of (log10|S_ref|^2 -
    log10|S_est|^2)^2) with magnitudes floored at 1e-8 before the log.
    """
    if len(reference) != len(estimate):
        raise ValueError("signals must have equal lengths")
    mag_ref = np.maximum(stft(reference, plan).magnitudes(), _LSD_FLOOR)
    mag_est = np.maximum(stft(estimate, plan).magnitudes(), _LSD_FLOOR)
    diff = 2.0 * (np.log10(mag_ref) - np.log10(mag_est))
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=0))))


@dataclass(frozen=True)
class FailureRisk:
    rms: float
    low_energy_warning: bool


def failure_risk(y: AudioBuffer, floor: float = 0.01) -> FailureRisk:
    """Flag observations too quiet to guide the optimization reliably.

    Blind inference tends to fail on near-silent passages, so the warning
    fires when the RMS level falls strictly below ``floor``.
    """
    level = rms(y)
    return FailureRisk(level, level < floor)
