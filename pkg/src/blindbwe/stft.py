"""Windowed STFT analysis/synthesis and zero-phase spectral-gain filtering.

Analysis reflect-pads the signal by half a window on each side, applies a
periodic Hamming window per frame, and takes the one-sided DFT of each frame.
Synthesis is weighted overlap-add normalized by the summed squared window,
which makes ``istft(stft(x))`` exact to floating precision for any input.

``apply_gains`` multiplies every frame's complex bins by real per-bin gains
(phases untouched) and resynthesizes; ``apply_gains_adjoint`` is its exact
transpose as a linear map on length-n signals, needed when data-consistency
costs are backpropagated through the filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from blindbwe.audio import AudioBuffer

__all__ = [
    "StftPlan",
    "Spectrogram",
    "stft",
    "istft",
    "apply_gains",
    "apply_gains_adjoint",
]


@lru_cache(maxsize=16)
def _window(length: int) -> np.ndarray:
    # Periodic Hamming; strictly positive, so overlap-add never divides by zero.
    n = np.arange(length)
    w = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / length)
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class StftPlan:
    """Frame geometry for analysis and synthesis; immutable once built."""

    window_len: int = 4096
    hop: int = 2048

    def __post_init__(self) -> None:
        if self.window_len <= 0 or self.window_len % 2 != 0:
            raise ValueError("window_len must be a positive even integer")
        if self.hop <= 0 or self.window_len % self.hop != 0:
            raise ValueError("window_len must be a positive multiple of hop")

    @property
    def window(self) -> np.ndarray:
        return _window(self.window_len)

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def bin_freqs(self, sample_rate: int) -> np.ndarray:
        """Center frequency in Hz of each analysis bin."""
        return np.fft.rfftfreq(self.window_len, d=1.0 / sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT frames, shaped (freq_bins, n_frames)."""

    frames: np.ndarray
    window_len: int
    hop: int
    sample_rate: int
    n_samples: int

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2:
            raise ValueError("frames must be a 2-d complex array")
        if frames.shape[0] != self.window_len // 2 + 1:
            raise ValueError("freq_bins must equal window_len/2 + 1")
        if frames.shape[1] < 1:
            raise ValueError("spectrogram needs at least one frame")
        frames = frames.copy()
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def n_bins(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[1])

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.frames)


def _effective_len(n: int, window_len: int) -> int:
    # Inputs shorter than one window are zero-padded up to it.
    return max(n, window_len)


def _num_frames(n_eff: int, hop: int) -> int:
    return n_eff // hop + 1


def _frame_indices(n_eff: int, window_len: int, hop: int) -> np.ndarray:
    m = _num_frames(n_eff, hop)
    return hop * np.arange(m)[:, None] + np.arange(window_len)[None, :]


def _overlap_add(frames: np.ndarray, idx: np.ndarray, out_len: int) -> np.ndarray:
    out = np.zeros(out_len)
    np.add.at(out, idx.ravel(), frames.ravel())
    return out


@lru_cache(maxsize=64)
def _ola_norm(n_eff: int, window_len: int, hop: int) -> np.ndarray:
    """Per-sample sum of squared synthesis windows over the padded extent."""
    idx = _frame_indices(n_eff, window_len, hop)
    w2 = np.tile(_window(window_len) ** 2, (idx.shape[0], 1))
    den = _overlap_add(w2, idx, n_eff + window_len)
    den[den == 0.0] = 1.0  # only the trimmed-away tail can be uncovered
    den.flags.writeable = False
    return den


def _reflect_fold(u: np.ndarray, pad: int, n: int) -> np.ndarray:
    """Adjoint of reflect-padding by ``pad`` samples on each side."""
    core = u[pad:pad + n].copy()
    if pad:
        core[1:pad + 1] += u[:pad][::-1]
        core[n - 1 - pad:n - 1] += u[pad + n:][::-1]
    return core


def stft(x: AudioBuffer, plan: StftPlan) -> Spectrogram:
    """Analyze a signal into windowed one-sided DFT frames.

    Signals shorter than one window are zero-padded up to it; both ends are
    then reflect-padded by half a window so every original sample is fully
    covered. For hop H this yields floor(N/H) + 1 frames.
    """
    data = x.samples
    n = data.size
    length, hop = plan.window_len, plan.hop
    if n < length:
        data = np.concatenate([data, np.zeros(length - n)])
    pad = length // 2
    padded = np.pad(data, pad, mode="reflect")
    idx = _frame_indices(data.size, length, hop)
    frames = padded[idx] * _window(length)
    spec = np.fft.rfft(frames, axis=1).T
    return Spectrogram(spec, length, hop, x.sample_rate, n)


def istft(spec: Spectrogram, plan: StftPlan, length: int | None = None) -> AudioBuffer:
    """Weighted overlap-add synthesis, trimmed back to the original length."""
    if (spec.window_len, spec.hop) != (plan.window_len, plan.hop):
        raise ValueError(
            f"spectrogram geometry ({spec.window_len}/{spec.hop}) does not "
            f"match the plan ({plan.window_len}/{plan.hop})"
        )
    win_len, hop = plan.window_len, plan.hop
    pad = win_len // 2
    n = spec.n_samples if length is None else int(length)
    n_eff = _effective_len(n, win_len)
    if spec.n_frames != _num_frames(n_eff, hop):
        raise ValueError(
            f"frame count {spec.n_frames} inconsistent with a length-{n} signal"
        )
    frames = np.fft.irfft(spec.frames.T, n=win_len, axis=1) * _window(win_len)
    idx = _frame_indices(n_eff, win_len, hop)
    out = _overlap_add(frames, idx, n_eff + win_len)
    out = out / _ola_norm(n_eff, win_len, hop)
    return AudioBuffer(out[pad:pad + n_eff][:n], spec.sample_rate)


def apply_gains(x: AudioBuffer, gains: np.ndarray, plan: StftPlan) -> AudioBuffer:
    """Zero-phase filter: scale each frame's bins by real gains, resynthesize.

    The output has the same length as the input. Gains must be one value per
    analysis bin and nonnegative (a magnitude response).
    """
    gains = np.asarray(gains, dtype=np.float64).reshape(-1)
    if gains.size != plan.n_bins:
        raise ValueError(f"need {plan.n_bins} gains, got {gains.size}")
    spec = stft(x, plan)
    filtered = Spectrogram(
        gains[:, None] * spec.frames,
        spec.window_len,
        spec.hop,
        spec.sample_rate,
        spec.n_samples,
    )
    return istft(filtered, plan)


def apply_gains_adjoint(
    v: np.ndarray, gains: np.ndarray, plan: StftPlan, n: int
) -> np.ndarray:
    """Exact transpose of ``apply_gains`` as a linear map on length-n signals.

    Every forward step (reflect pad, framing, windowing, per-frame spectral
    gain, overlap-add, per-sample normalization, trimming) is transposed in
    reverse order, so ``<A x, v> == <x, A^T v>`` holds to roundoff.
    """
    gains = np.asarray(gains, dtype=np.float64).reshape(-1)
    win_len, hop = plan.window_len, plan.hop
    if gains.size != plan.n_bins:
        raise ValueError(f"need {plan.n_bins} gains, got {gains.size}")
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != n:
        raise ValueError("adjoint input length must match the signal length")
    pad = win_len // 2
    n_eff = _effective_len(n, win_len)
    idx = _frame_indices(n_eff, win_len, hop)
    w = _window(win_len)

    u = np.zeros(n_eff + win_len)
    u[pad:pad + n] = v
    u = u / _ola_norm(n_eff, win_len, hop)
    frames = u[idx] * w
    frames = np.fft.irfft(np.fft.rfft(frames, axis=1) * gains[None, :], n=win_len, axis=1)
    frames *= w
    out = _overlap_add(frames, idx, n_eff + win_len)
    return _reflect_fold(out, pad, n_eff)[:n]
