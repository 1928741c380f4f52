"""Guided reverse diffusion with joint lowpass-filter inference.

The engine walks a decreasing noise schedule from a warm initialization of
the observations. Each step denoises, refits the filter on the denoised
estimate (blind mode), and corrects the state with reconstruction guidance:
the gradient of the data-consistency cost ||y - filter(x_hat0)||^2 pushed
back through the filter adjoint and the denoiser's vector-Jacobian product,
scaled so the correction has a controlled norm. The informed variant skips
filter inference and uses a known response instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from blindbwe.audio import AudioBuffer
from blindbwe.lowpass import (
    FilterBounds,
    FilterOptimizationError,
    FilterParams,
    FreqWeighting,
    _grad_from_mags,
    _optimize_from_mags,
    default_filter_init,
    project,
    response_gain,
)
from blindbwe.prior import DenoiserContract
from blindbwe.stft import StftPlan, apply_gains, apply_gains_adjoint, stft

__all__ = [
    "NoiseSchedule",
    "SamplerConfig",
    "StepDiagnostics",
    "RestorationReport",
    "schedule_sigma",
    "warm_init",
    "guidance_scale",
    "reconstruction_guidance",
    "step_update",
    "blind_sample",
    "informed_sample",
    "unconditional_sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Warped discretization of noise levels from sigma_start down to sigma_min.

    sigma_i = (sigma_start^(1/rho) + i/(steps-1) * (sigma_min^(1/rho)
              - sigma_start^(1/rho)))^rho  for i = 0 .. steps-1.
    """

    steps: int = 35
    sigma_start: float = 0.2
    sigma_min: float = 1e-4
    rho: float = 8.0

    def __post_init__(self) -> None:
        if self.steps < 2:
            raise ValueError("schedule needs at least two steps")
        if not (self.sigma_start > self.sigma_min > 0):
            raise ValueError("need sigma_start > sigma_min > 0")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    def sigma(self, i: int) -> float:
        if not 0 <= i <= self.steps - 1:
            raise IndexError(f"step index {i} outside [0, {self.steps - 1}]")
        a = self.sigma_start ** (1.0 / self.rho)
        b = self.sigma_min ** (1.0 / self.rho)
        return float((a + (i / (self.steps - 1)) * (b - a)) ** self.rho)

    def sigmas(self) -> np.ndarray:
        a = self.sigma_start ** (1.0 / self.rho)
        b = self.sigma_min ** (1.0 / self.rho)
        ramp = a + (np.arange(self.steps) / (self.steps - 1)) * (b - a)
        return ramp**self.rho


def schedule_sigma(schedule: NoiseSchedule, i: int) -> float:
    """Noise level at step index i (0 = sigma_start, steps-1 = sigma_min)."""
    return schedule.sigma(i)


@dataclass(frozen=True)
class SamplerConfig:
    """Everything one restoration run needs besides data and a denoiser.

    Field defaults are the tuned operating point: 35 steps from
    sigma_start 0.2, guidance scale 0.2, five filter breakpoints, and filter
    step sizes (1000, 10) with convergence tolerance 5e-3.
    """

    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    xi_prime: float = 0.2
    n_breakpoints: int = 5
    mu_fc: float = 1000.0
    mu_slope: float = 10.0
    max_inner_iters: int = 100
    inner_tol: float = 5e-3
    stochastic_churn: float = 0.0
    order: int = 2
    seed: int = 0
    jacobian_mode: str = "exact"
    window_len: int = 4096
    hop: int = 2048
    filter_init: FilterParams | None = None
    bounds: FilterBounds | None = None

    def __post_init__(self) -> None:
        if self.xi_prime < 0:
            raise ValueError("xi_prime must be nonnegative")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 (Euler) or 2 (Heun)")
        if self.jacobian_mode not in ("exact", "identity"):
            raise ValueError("jacobian_mode must be 'exact' or 'identity'")
        if self.stochastic_churn < 0:
            raise ValueError("stochastic_churn must be nonnegative")
        if self.n_breakpoints < 1:
            raise ValueError("need at least one filter breakpoint")

    def plan(self) -> StftPlan:
        return StftPlan(self.window_len, self.hop)

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=seed)


@dataclass
class StepDiagnostics:
    step: int
    sigma: float
    c_audio: float
    c_filter: float
    guidance_norm: float
    inner_iterations: int

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "sigma": self.sigma,
            "c_audio": self.c_audio,
            "c_filter": self.c_filter,
            "guidance_norm": self.guidance_norm,
            "inner_iterations": self.inner_iterations,
        }


@dataclass
class RestorationReport:
    """Outcome of one sampling run.

    ``phi_trajectory`` holds the filter estimate after each executed step
    (empty in informed and unconditional modes); diagnostics are per step and
    stay finite unless ``failure_flag`` is set.
    """

    x0: AudioBuffer
    phi_trajectory: list[FilterParams]
    diagnostics: list[StepDiagnostics]
    failure_flag: bool = False
    failure_reason: str | None = None

    @property
    def final_filter(self) -> FilterParams | None:
        return self.phi_trajectory[-1] if self.phi_trajectory else None


def warm_init(y: AudioBuffer, sigma_start: float, rng: np.random.Generator) -> AudioBuffer:
    """Observations plus white noise at sigma_start; deterministic per rng state."""
    if sigma_start < 0:
        raise ValueError("sigma_start must be nonnegative")
    noise = rng.standard_normal(len(y))
    return y.with_samples(y.samples + sigma_start * noise)


def guidance_scale(xi_prime: float, n_samples: int, sigma: float, grad) -> float:
    """Step size xi = xi' * sqrt(N) / (sigma * ||grad||).

    Normalizing by the gradient's Euclidean norm makes the guidance update a
    controlled-size move along the descent direction, annealed by the noise
    schedule through the sigma*(sigma_next - sigma) factor of the update
    line. A zero gradient returns 0.0, meaning guidance is skipped for the
    step (silent passages must not produce a division by zero).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    g = np.asarray(grad, dtype=np.float64)
    norm = float(np.linalg.norm(g.ravel()))
    if norm == 0.0:
        return 0.0
    return float(xi_prime * np.sqrt(n_samples) / (sigma * norm))


def _guidance_terms(
    y: np.ndarray,
    x: np.ndarray,
    x_hat0: np.ndarray,
    sigma: float,
    gains: np.ndarray,
    denoiser: DenoiserContract,
    plan: StftPlan,
    xi_prime: float,
    jacobian_mode: str,
    sample_rate: int,
    tail: tuple[np.ndarray, np.ndarray, float] | None = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Guidance vector g = -xi * grad_x C, plus (C_audio, grad_x C).

    C_audio = ||y - filter(x_hat0)||^2; its gradient w.r.t. x_hat0 is the
    filter adjoint applied to twice the residual, then pushed through the
    denoiser's VJP (or used as-is under the identity-Jacobian approximation).
    An optional masked tail term 2*w*mask*(x_hat0 - target) joins the same
    backpropagation, conditioning segment starts on already-restored audio.
    """
    n = y.size
    y_hat = apply_gains(AudioBuffer(x_hat0, sample_rate), gains, plan).samples
    residual = y_hat - y
    c_audio = float(np.dot(residual, residual))
    d_xhat = 2.0 * apply_gains_adjoint(residual, gains, plan, n)
    if tail is not None:
        mask, target, weight = tail
        d_xhat = d_xhat + 2.0 * weight * mask * (x_hat0 - target)
    if jacobian_mode == "identity":
        grad = d_xhat
    else:
        grad = denoiser.vjp(
            AudioBuffer(x, sample_rate), sigma, AudioBuffer(d_xhat, sample_rate)
        ).samples
    xi = guidance_scale(xi_prime, n, sigma, grad)
    return -xi * grad, c_audio, grad


def audio_cost_gradient(
    y: AudioBuffer,
    x: AudioBuffer,
    sigma: float,
    phi: FilterParams,
    denoiser: DenoiserContract,
    plan: StftPlan,
    jacobian_mode: str = "exact",
) -> tuple[float, AudioBuffer]:
    """Data-consistency cost ||y - filter(denoise(x, sigma))||^2 and its
    exact gradient with respect to x (filter adjoint, then denoiser VJP)."""
    x_hat0 = denoiser.denoise(x, sigma)
    gains = response_gain(phi, plan.bin_freqs(y.sample_rate))
    _, c_audio, grad = _guidance_terms(
        y.samples,
        x.samples,
        x_hat0.samples,
        sigma,
        gains,
        denoiser,
        plan,
        0.0,
        jacobian_mode,
        y.sample_rate,
    )
    return c_audio, y.with_samples(grad)


def reconstruction_guidance(
    y: AudioBuffer,
    x: AudioBuffer,
    sigma: float,
    phi: FilterParams,
    denoiser: DenoiserContract,
    plan: StftPlan,
    xi_prime: float = 0.2,
    jacobian_mode: str = "exact",
) -> AudioBuffer:
    """Guidance term g for one step, from scratch (denoises internally)."""
    x_hat0 = denoiser.denoise(x, sigma)
    gains = response_gain(phi, plan.bin_freqs(y.sample_rate))
    g, _, _ = _guidance_terms(
        y.samples,
        x.samples,
        x_hat0.samples,
        sigma,
        gains,
        denoiser,
        plan,
        xi_prime,
        jacobian_mode,
        y.sample_rate,
    )
    return y.with_samples(g)


def step_update(
    x: np.ndarray,
    s: np.ndarray,
    g: np.ndarray,
    sigma: float,
    sigma_next: float,
    *,
    order: int = 1,
    churn: float = 0.0,
    rng: np.random.Generator | None = None,
    score_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> np.ndarray:
    """One reverse step from sigma to sigma_next (< sigma).

    Order 1 is the plain Euler line x - sigma*(sigma_next - sigma)*(s + g).
    Order 2 re-evaluates the prior score at the Euler point and averages the
    two prior slopes (Heun); the guidance term is applied once, from the
    first evaluation. ``churn`` > 0 first inflates sigma by (1 + churn) with
    fresh noise, which requires ``rng`` and ``score_fn``.
    """
    if not sigma_next < sigma:
        raise ValueError("sigma_next must be below sigma")
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if churn > 0.0:
        if rng is None or score_fn is None:
            raise ValueError("churn requires an rng and a score_fn")
        sigma_hat = sigma * (1.0 + churn)
        x = x + np.sqrt(sigma_hat**2 - sigma**2) * rng.standard_normal(x.size)
        s = score_fn(x, sigma_hat)
        sigma = sigma_hat
    h = sigma_next - sigma
    d_prior = -sigma * s
    d_guid = -sigma * g
    if order == 1 or sigma_next == 0.0:
        return x + h * (d_prior + d_guid)
    if score_fn is None:
        raise ValueError("order 2 requires a score_fn for the midpoint evaluation")
    x_euler = x + h * (d_prior + d_guid)
    d_prior_next = -sigma_next * score_fn(x_euler, sigma_next)
    return x + h * (0.5 * (d_prior + d_prior_next) + d_guid)


def _resolve_gains(h_known, plan: StftPlan, sample_rate: int) -> np.ndarray:
    """Known response -> per-bin linear gains on the analysis grid."""
    freqs = plan.bin_freqs(sample_rate)
    if isinstance(h_known, FilterParams):
        return response_gain(h_known, freqs)
    if hasattr(h_known, "freqs_hz") and hasattr(h_known, "magnitudes"):
        table_f = np.asarray(h_known.freqs_hz, dtype=np.float64)
        table_m = np.asarray(h_known.magnitudes, dtype=np.float64)
        safe = np.maximum(freqs, table_f[0])
        return np.interp(np.log(safe), np.log(table_f), table_m)
    gains = np.asarray(h_known, dtype=np.float64).reshape(-1)
    if gains.size != plan.n_bins:
        raise ValueError(f"need {plan.n_bins} gains, got {gains.size}")
    return gains


def _run(
    y: AudioBuffer,
    denoiser: DenoiserContract,
    config: SamplerConfig,
    *,
    mode: str,
    known_gains: np.ndarray | None = None,
    tail: tuple[np.ndarray, np.ndarray, float] | None = None,
    on_step: Callable[[StepDiagnostics], None] | None = None,
) -> RestorationReport:
    if len(y) != denoiser.supported_length:
        raise ValueError(
            f"input length {len(y)} != denoiser supported_length "
            f"{denoiser.supported_length}"
        )
    if y.sample_rate != denoiser.sample_rate:
        raise ValueError("sample rate mismatch between input and denoiser")

    n = len(y)
    rate = y.sample_rate
    plan = config.plan()
    bounds = config.bounds or FilterBounds.for_rate(rate)
    rng = np.random.default_rng(config.seed)
    sigmas = config.schedule.sigmas()
    guided = mode != "unconditional" and config.xi_prime > 0.0

    if mode == "unconditional":
        x = sigmas[0] * rng.standard_normal(n)
    else:
        x = warm_init(y, sigmas[0], rng).samples.copy()

    blind = mode == "blind"
    phi = None
    freqs = plan.bin_freqs(rate)
    weighting = FreqWeighting.for_plan(plan, rate)
    mag_y = stft(y, plan).magnitudes() if mode != "unconditional" else None
    if blind:
        phi = project(
            config.filter_init
            if config.filter_init is not None
            else default_filter_init(config.n_breakpoints),
            bounds,
        )
        gains = response_gain(phi, freqs)
    elif mode == "informed":
        gains = known_gains
    else:
        gains = None

    def score_fn(state: np.ndarray, sigma: float) -> np.ndarray:
        est = denoiser.denoise(AudioBuffer(state, rate), sigma)
        return (est.samples - state) / sigma**2

    churn_per_step = (
        min(config.stochastic_churn / (config.schedule.steps - 1), np.sqrt(2.0) - 1.0)
        if config.stochastic_churn > 0
        else 0.0
    )

    trajectory: list[FilterParams] = []
    diagnostics: list[StepDiagnostics] = []
    failure_flag = False
    failure_reason = None
    prev_c_filter = None

    for j in range(config.schedule.steps - 1):
        sigma = float(sigmas[j])
        sigma_next = float(sigmas[j + 1])
        try:
            x_hat0 = denoiser.denoise(AudioBuffer(x, rate), sigma).samples
        except ValueError as exc:
            failure_flag, failure_reason = True, f"step {j}: {exc}"
            break

        c_filter = 0.0
        inner_iters = 0
        if blind:
            mag_x0 = stft(AudioBuffer(x_hat0, rate), plan).magnitudes()
            try:
                phi, info = _optimize_from_mags(
                    mag_y,
                    mag_x0,
                    phi,
                    freqs,
                    weighting.weights,
                    bounds,
                    mu_fc=config.mu_fc,
                    mu_slope=config.mu_slope,
                    max_iters=config.max_inner_iters,
                    tol=config.inner_tol,
                )
            except FilterOptimizationError as exc:
                failure_flag = True
                failure_reason = f"step {j}: {exc}"
                break
            inner_iters = info.iterations
            c_filter = info.cost
            gains = response_gain(phi, freqs)
            trajectory.append(phi)
        elif mode == "informed":
            mag_x0 = stft(AudioBuffer(x_hat0, rate), plan).magnitudes()
            c_filter = _filtered_cost(mag_y, mag_x0, gains, weighting.weights)

        c_audio = 0.0
        guidance_norm = 0.0
        g = np.zeros(n)
        if guided:
            g, c_audio, grad = _guidance_terms(
                y.samples,
                x,
                x_hat0,
                sigma,
                gains,
                denoiser,
                plan,
                config.xi_prime,
                config.jacobian_mode,
                rate,
                tail=tail,
            )
            guidance_norm = float(np.linalg.norm(grad))

        s = (x_hat0 - x) / sigma**2
        x_new = step_update(
            x,
            s,
            g,
            sigma,
            sigma_next,
            order=config.order,
            churn=churn_per_step,
            rng=rng,
            score_fn=score_fn,
        )

        diag = StepDiagnostics(j, sigma, c_audio, c_filter, guidance_norm, inner_iters)
        diagnostics.append(diag)
        if on_step is not None:
            on_step(diag)

        if not np.all(np.isfinite(x_new)):
            failure_flag, failure_reason = True, f"step {j}: non-finite state"
            break
        if blind and prev_c_filter is not None and prev_c_filter > 0:
            if c_filter > 1e3 * prev_c_filter and c_filter > 1e-9:
                failure_flag = True
                failure_reason = f"step {j}: filter cost exploded ({c_filter:.3e})"
                x = x_new
                break
        prev_c_filter = c_filter if blind else None
        x = x_new

    return RestorationReport(
        AudioBuffer(x, rate),
        trajectory,
        diagnostics,
        failure_flag=failure_flag,
        failure_reason=failure_reason,
    )


def _filtered_cost(mag_y, mag_x0, gains, weights) -> float:
    w2 = weights**2
    diff = mag_y - gains[:, None] * mag_x0
    return float(w2 @ (diff**2).sum(axis=1))


def blind_sample(
    y: AudioBuffer,
    denoiser: DenoiserContract,
    config: SamplerConfig,
    *,
    tail: tuple[np.ndarray, np.ndarray, float] | None = None,
    on_step: Callable[[StepDiagnostics], None] | None = None,
) -> RestorationReport:
    """Jointly reconstruct the wideband signal and infer the lowpass filter.

    Runs warm-initialized reverse diffusion; at every step the filter is
    refit on the current denoised estimate (warm-started from the previous
    step's parameters) before the guidance correction is applied. ``tail``
    is an optional (mask, target, weight) triple adding a masked L2 term on
    the denoised estimate to the guidance cost.
    """
    return _run(y, denoiser, config, mode="blind", tail=tail, on_step=on_step)


def informed_sample(
    y: AudioBuffer,
    h_known,
    denoiser: DenoiserContract,
    config: SamplerConfig,
    *,
    tail: tuple[np.ndarray, np.ndarray, float] | None = None,
    on_step: Callable[[StepDiagnostics], None] | None = None,
) -> RestorationReport:
    """Like ``blind_sample`` but with a known degradation response.

    ``h_known`` may be a FilterParams, a response table with ``freqs_hz`` /
    ``magnitudes`` (interpolated onto the analysis grid in log frequency),
    or a per-bin gain vector.
    """
    gains = _resolve_gains(h_known, config.plan(), y.sample_rate)
    return _run(
        y, denoiser, config, mode="informed", known_gains=gains, tail=tail,
        on_step=on_step,
    )


def unconditional_sample(
    denoiser: DenoiserContract,
    config: SamplerConfig,
    *,
    on_step: Callable[[StepDiagnostics], None] | None = None,
) -> RestorationReport:
    """Sample from the prior alone: pure-noise init, no guidance, no filter."""
    silence = AudioBuffer(
        np.zeros(denoiser.supported_length), denoiser.sample_rate
    )
    return _run(silence, denoiser, config, mode="unconditional", on_step=on_step)
