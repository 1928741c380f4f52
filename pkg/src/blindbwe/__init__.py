"""Blind audio bandwidth extension.

Reconstructs the missing high-frequency content of a bandlimited recording
while inferring the unknown lowpass degradation, by running guided reverse
diffusion against a denoiser prior with an embedded gradient-based filter
fit. The analytic Gaussian prior makes the whole chain verifiable end to
end; external neural denoisers plug in over a framed wire protocol.
"""

from blindbwe.audio import AudioBuffer, fft_mag, normalize_loudness, rms
from blindbwe.lowpass import (
    FilterBounds,
    FilterOptimizationError,
    FilterParams,
    FreqWeighting,
    apply_filter,
    cost_filter,
    default_filter_init,
    filter_response_db,
    grad_cost_filter,
    optimize_filter,
    project,
    response_gain,
    weighted_magnitude_cost,
)
from blindbwe.metrics import (
    FailureRisk,
    ResponseTable,
    failure_risk,
    fre,
    log_frequency_grid,
    lsd,
)
from blindbwe.pipeline import (
    BlockRestoreResult,
    ConfigError,
    PipelineConfig,
    PipelineResult,
    block_autoregressive_restore,
    run_restoration,
    simulate_degradation,
)
from blindbwe.prior import (
    DenoiserContract,
    ExternalDenoiser,
    GaussianPrior,
    ProtocolError,
    RemoteDenoiserError,
    external_denoiser_connect,
    score_from_denoised,
)
from blindbwe.sampler import (
    NoiseSchedule,
    RestorationReport,
    SamplerConfig,
    StepDiagnostics,
    audio_cost_gradient,
    blind_sample,
    guidance_scale,
    informed_sample,
    reconstruction_guidance,
    schedule_sigma,
    step_update,
    unconditional_sample,
    warm_init,
)
from blindbwe.stft import Spectrogram, StftPlan, apply_gains, apply_gains_adjoint, istft, stft
from blindbwe.wavio import read_wav, write_wav

__version__ = "0.1.0"
