"""Analytic Gaussian denoiser for protocol conformance testing.

Independent reimplementation of the spectral-shrinkage denoiser used by the
restoration engine's in-process Gaussian prior: one variance per one-sided
DFT bin decaying as 1/(1 + (f/f_knee)^2), scaled to an overall standard
deviation of sigma_data, with the MMSE estimate shrinking each bin by
lambda/(lambda + sigma^2). Kept operation-for-operation aligned with the
client package so float64 outputs agree bit for bit.
"""

from __future__ import annotations

import numpy as np


class GaussianDenoiser:
    def __init__(
        self,
        supported_length: int = 4096,
        sample_rate: int = 22050,
        f_knee_hz: float = 500.0,
        sigma_data: float = 0.07,
    ):
        self.supported_length = int(supported_length)
        self.sample_rate = int(sample_rate)
        self.sigma_data = float(sigma_data)
        freqs = np.fft.rfftfreq(supported_length, d=1.0 / sample_rate)
        shape = 1.0 / (1.0 + (freqs / f_knee_hz) ** 2)
        trace = 2.0 * float(shape.sum()) - float(shape[0])
        if supported_length % 2 == 0:
            trace -= float(shape[-1])
        scale = sigma_data**2 * supported_length / trace
        self.spectral_variances = scale * shape

    def _shrink(self, sigma: float) -> np.ndarray:
        lam = self.spectral_variances
        return lam / (lam + sigma**2)

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        return np.fft.irfft(
            self._shrink(sigma) * np.fft.rfft(x), n=self.supported_length
        )

    def vjp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray:
        # linear denoiser with a symmetric Jacobian: J^T v is the same shrinkage
        return np.fft.irfft(
            self._shrink(sigma) * np.fft.rfft(v), n=self.supported_length
        )
