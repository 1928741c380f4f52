"""File-to-file restoration: configuration, degradation simulation,
long-recording block-autoregressive processing, and report emission.

Long inputs are split into overlapping segments. The first segment is
restored blind; its estimated filter is frozen and reused for every later
segment (time-invariant degradation), and each later segment is additionally
conditioned on the tail of the previously restored audio so the pieces join
coherently. Segments are stitched with an equal-power crossfade.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from blindbwe.audio import AudioBuffer, normalize_loudness, rms
from blindbwe.lowpass import FilterBounds, FilterParams, apply_filter, project
from blindbwe.metrics import (
    ResponseTable,
    failure_risk,
    fre,
    log_frequency_grid,
    lsd,
)
from blindbwe.prior import GaussianPrior, external_denoiser_connect
from blindbwe.sampler import (
    NoiseSchedule,
    RestorationReport,
    SamplerConfig,
    blind_sample,
    informed_sample,
    unconditional_sample,
)
from blindbwe.stft import StftPlan
from blindbwe.wavio import read_wav, write_wav

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "PipelineResult",
    "BlockRestoreResult",
    "simulate_degradation",
    "block_autoregressive_restore",
    "run_restoration",
]

MODES = ("blind", "informed", "simulate", "unconditional")


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


@dataclass
class PipelineConfig:
    """Mirror of the JSON config document accepted by the CLI."""

    input: str | None = None
    output: str | None = None
    mode: str = "blind"
    denoiser: dict = field(default_factory=lambda: {"kind": "gaussian"})
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    segment_length: int = 184832
    overlap: float = 0.25
    sigma_data: float | None = None
    normalize: bool = True
    seed: int = 0
    tail_weight: float = 1.0
    resample_if_needed: bool = False
    predenoise_cmd: str | None = None
    informed_filter: dict | None = None
    simulate_filter: dict | None = None
    simulate_noise_std: float = 0.0
    reference_audio: str | None = None
    reference_filter: dict | None = None
    trace: str | None = None
    rms_warning_floor: float = 0.01
    output_encoding: str = "float32"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.overlap <= 0.5:
            raise ConfigError("overlap must be in [0, 0.5]")
        if self.segment_length < 2:
            raise ConfigError("segment_length must be at least 2")
        if self.mode == "informed" and self.informed_filter is None:
            raise ConfigError("informed mode needs an informed_filter")
        if self.mode == "simulate" and self.simulate_filter is None:
            raise ConfigError("simulate mode needs a simulate_filter")
        overlap_samples = int(round(self.overlap * self.segment_length))
        if self.overlap > 0 and overlap_samples < self.sampler.window_len:
            raise ConfigError(
                "overlap must span at least one analysis window in "
                "autoregressive mode"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        sampler_data = data.pop("sampler", {})
        schedule = NoiseSchedule(
            steps=sampler_data.pop("steps", 35),
            sigma_start=sampler_data.pop("sigma_start", 0.2),
            sigma_min=sampler_data.pop("sigma_min", 1e-4),
            rho=sampler_data.pop("rho", 8.0),
        )
        try:
            sampler = SamplerConfig(schedule=schedule, **sampler_data)
            return cls(sampler=sampler, **data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


@dataclass
class PipelineResult:
    audio: AudioBuffer
    output_path: str | None
    filter_params: FilterParams | None
    report: dict
    segment_reports: list[RestorationReport]
    failed_segments: list[int]
    gain: float


@dataclass
class BlockRestoreResult:
    audio: AudioBuffer
    filter_params: FilterParams | None
    segment_reports: list[RestorationReport]
    segment_starts: list[int]
    failed_segments: list[int]
    overlap_mismatch: list[float]


def simulate_degradation(
    x: AudioBuffer,
    phi: FilterParams,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    plan: StftPlan | None = None,
) -> AudioBuffer:
    """Bandlimit a signal with the parametric filter, plus optional noise."""
    plan = plan or StftPlan()
    out = apply_filter(x, phi, plan)
    if noise_std > 0.0:
        rng = rng or np.random.default_rng(0)
        out = out.with_samples(out.samples + noise_std * rng.standard_normal(len(out)))
    return out


def _equal_power_fades(n: int) -> tuple[np.ndarray, np.ndarray]:
    theta = 0.5 * np.pi * (np.arange(n) + 0.5) / n
    return np.cos(theta), np.sin(theta)  # (fade-out, fade-in), squares sum to 1


def stitch_segments(
    segments: list[np.ndarray], starts: list[int], total_len: int
) -> np.ndarray:
    """Overlap segments with equal-power crossfades; exact when disjoint."""
    out = np.zeros(total_len)
    prev_end = 0
    for seg, start in zip(segments, starts):
        end = min(start + seg.size, total_len)
        piece = seg[: end - start]
        overlap = max(prev_end - start, 0)
        if overlap > 0:
            fade_out, fade_in = _equal_power_fades(overlap)
            out[start:start + overlap] *= fade_out
            piece = piece.copy()
            piece[:overlap] *= fade_in
        out[start:end] += piece
        prev_end = end
    return out


def _segment_starts(total: int, seg_len: int, overlap_samples: int) -> list[int]:
    if total <= seg_len:
        return [0]
    step = seg_len - overlap_samples
    starts = list(range(0, total - seg_len, step))
    last = total - seg_len
    if starts[-1] != last:
        starts.append(last)
    return starts


def _build_denoiser(config: PipelineConfig, segment_length: int, sample_rate: int):
    spec = dict(config.denoiser)
    kind = spec.pop("kind", "gaussian")
    if kind == "gaussian":
        return GaussianPrior.with_spectral_knee(
            segment_length,
            sample_rate,
            f_knee_hz=spec.pop("f_knee_hz", 500.0),
            sigma_data=spec.pop("sigma_data", 0.07),
        )
    if kind == "external":
        endpoint = spec.pop("endpoint", None)
        if endpoint is None:
            raise ConfigError("external denoiser needs an endpoint")
        return external_denoiser_connect(endpoint, timeout=spec.pop("timeout", 30.0))
    raise ConfigError(f"unknown denoiser kind {kind!r}")


def _run_predenoise(cmd: str, x: AudioBuffer) -> AudioBuffer:
    """External structured-noise removal hook: cmd gets {in} and {out} paths."""
    with tempfile.TemporaryDirectory() as tmp:
        src = str(Path(tmp) / "pre_in.wav")
        dst = str(Path(tmp) / "pre_out.wav")
        write_wav(src, x)
        if "{in}" in cmd or "{out}" in cmd:
            argv = [a.format(**{"in": src, "out": dst}) for a in shlex.split(cmd)]
        else:
            argv = shlex.split(cmd) + [src, dst]
        proc = subprocess.run(argv)
        if proc.returncode != 0:
            raise ConnectionError(
                f"pre-denoise command failed with exit code {proc.returncode}"
            )
        return read_wav(dst)


def _segment_rng(seed: int, segment_index: int) -> int:
    # Distinct, reproducible per-segment seeds.
    return int(np.random.SeedSequence([seed, segment_index]).generate_state(1)[0])


def block_autoregressive_restore(
    y_long: AudioBuffer, config: PipelineConfig, denoiser=None
) -> BlockRestoreResult:
    """Restore a long recording segment by segment.

    Segment 0 runs blind (or informed, per mode); its filter is estimated
    once and frozen for the rest. Later segments add a masked L2 guidance
    term tying their first ``overlap`` samples to the previously restored
    tail, then everything is crossfaded together. A failed segment falls
    back to the filtered observations and is reported by index.
    """
    seg_len = min(config.segment_length, len(y_long))
    overlap_samples = int(round(config.overlap * seg_len))
    starts = _segment_starts(len(y_long), seg_len, overlap_samples)
    own_denoiser = denoiser is None
    if own_denoiser:
        denoiser = _build_denoiser(config, seg_len, y_long.sample_rate)
    try:
        return _block_restore(y_long, config, denoiser, seg_len, starts)
    finally:
        if own_denoiser and hasattr(denoiser, "close"):
            denoiser.close()


def _block_restore(
    y_long: AudioBuffer,
    config: PipelineConfig,
    denoiser,
    seg_len: int,
    starts: list[int],
) -> BlockRestoreResult:
    rate = y_long.sample_rate
    reports: list[RestorationReport] = []
    failed: list[int] = []
    outputs: list[np.ndarray] = []
    mismatches: list[float] = []
    filter_params: FilterParams | None = None

    if config.mode == "informed":
        filter_params = project(
            FilterParams.from_dict(config.informed_filter),
            config.sampler.bounds or FilterBounds.for_rate(rate),
        )

    for idx, start in enumerate(starts):
        seg = AudioBuffer(y_long.samples[start:start + seg_len], rate)
        seed = _segment_rng(config.seed, idx)
        seg_config = config.sampler.with_seed(seed)

        tail = None
        if idx > 0:
            prev_start = starts[idx - 1]
            lead = prev_start + outputs[idx - 1].size - start
            lead = max(min(lead, seg_len), 0)
            if lead > 0:
                mask = np.zeros(seg_len)
                mask[:lead] = 1.0
                target = np.zeros(seg_len)
                target[:lead] = outputs[idx - 1][start - prev_start:][:lead]
                tail = (mask, target, config.tail_weight)

        if config.mode == "unconditional":
            report = unconditional_sample(denoiser, seg_config)
        elif config.mode == "informed" or (config.mode == "blind" and idx > 0):
            phi = filter_params
            report = informed_sample(seg, phi, denoiser, seg_config, tail=tail)
        else:
            report = blind_sample(seg, denoiser, seg_config, tail=tail)
            filter_params = report.final_filter

        reports.append(report)
        if report.failure_flag:
            failed.append(idx)
            outputs.append(seg.samples.copy())  # fall back to the observations
        else:
            outputs.append(report.x0.samples.copy())

        if idx > 0:
            prev_start = starts[idx - 1]
            lead = max(min(prev_start + outputs[idx - 1].size - start, seg_len), 0)
            if lead > 0:
                prev_tail = outputs[idx - 1][start - prev_start:][:lead]
                head = outputs[idx][:lead]
                denom = float(np.linalg.norm(prev_tail))
                mismatches.append(
                    float(np.linalg.norm(prev_tail - head)) / denom
                    if denom > 0
                    else 0.0
                )

    stitched = stitch_segments(outputs, starts, len(y_long))
    return BlockRestoreResult(
        AudioBuffer(stitched, rate),
        filter_params,
        reports,
        starts,
        failed,
        mismatches,
    )


def _resample(x: AudioBuffer, target_rate: int) -> AudioBuffer:
    ratio = Fraction(target_rate, x.sample_rate).limit_denominator(1000)
    out = resample_poly(x.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(out, target_rate)


def _metrics_block(
    config: PipelineConfig,
    restored: AudioBuffer,
    estimated: FilterParams | None,
) -> dict:
    metrics: dict = {}
    if config.reference_filter is not None and estimated is not None:
        grid = log_frequency_grid(restored.sample_rate)
        bounds = FilterBounds.for_rate(restored.sample_rate)
        ref_phi = project(FilterParams.from_dict(config.reference_filter), bounds)
        value = fre(
            ResponseTable.from_filter(ref_phi, grid),
            ResponseTable.from_filter(estimated, grid),
        )
        metrics["fre_db"] = "-inf" if math.isinf(value) else value
    if config.reference_audio is not None:
        reference = read_wav(config.reference_audio)
        if len(reference) >= len(restored):
            reference = AudioBuffer(
                reference.samples[: len(restored)], reference.sample_rate
            )
            metrics["lsd"] = lsd(
                reference,
                restored,
                StftPlan(config.sampler.window_len, config.sampler.hop),
            )
    return metrics


def run_restoration(config: PipelineConfig) -> PipelineResult:
    """Execute one configured job: read, process, write, report."""
    if config.input is None or config.output is None:
        raise ConfigError("config needs input and output paths")
    y = read_wav(config.input)

    if config.mode == "simulate":
        bounds = FilterBounds.for_rate(y.sample_rate)
        phi = project(FilterParams.from_dict(config.simulate_filter), bounds)
        rng = np.random.default_rng(config.seed)
        plan = StftPlan(config.sampler.window_len, config.sampler.hop)
        out = simulate_degradation(y, phi, config.simulate_noise_std, rng, plan)
        write_wav(config.output, out, config.output_encoding)
        report = {
            "mode": "simulate",
            "filter": phi.to_dict(y.sample_rate),
            "noise_std": config.simulate_noise_std,
        }
        return PipelineResult(out, config.output, phi, report, [], [], 1.0)

    if config.predenoise_cmd:
        y = _run_predenoise(config.predenoise_cmd, y)

    seg_len = min(config.segment_length, len(y))
    denoiser = _build_denoiser(config, seg_len, y.sample_rate)
    try:
        if y.sample_rate != denoiser.sample_rate:
            if not config.resample_if_needed:
                raise ConfigError(
                    f"input rate {y.sample_rate} != denoiser rate "
                    f"{denoiser.sample_rate}; pass resample_if_needed to convert"
                )
            y = _resample(y, denoiser.sample_rate)
            seg_len = min(config.segment_length, len(y))

        gain = 1.0
        if config.normalize and config.mode != "unconditional":
            target = config.sigma_data or denoiser.sigma_data
            y, gain = normalize_loudness(y, target)

        risk = failure_risk(y, config.rms_warning_floor)
        if risk.low_energy_warning:
            print(
                f"warning: observations RMS {risk.rms:.4g} below "
                f"{config.rms_warning_floor}; blind inference may not converge",
                file=sys.stderr,
            )

        pad = 0
        work = y
        if len(y) < denoiser.supported_length:
            pad = denoiser.supported_length - len(y)
            work = AudioBuffer(
                np.concatenate([y.samples, np.zeros(pad)]), y.sample_rate
            )

        block = block_autoregressive_restore(work, config, denoiser)
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()

    restored = block.audio
    if pad:
        restored = AudioBuffer(restored.samples[: len(y)], restored.sample_rate)
    restored = restored.with_samples(restored.samples / gain)

    write_wav(config.output, restored, config.output_encoding)

    report: dict = {
        "mode": config.mode,
        "seed": config.seed,
        "gain": gain,
        "segments": len(block.segment_reports),
        "failed_segments": block.failed_segments,
        "low_energy_warning": risk.low_energy_warning,
        "rms": risk.rms,
    }
    if block.filter_params is not None:
        report["filter"] = block.filter_params.to_dict(restored.sample_rate)
    metrics = _metrics_block(config, restored, block.filter_params)
    if metrics:
        report["metrics"] = metrics

    if config.trace:
        with open(config.trace, "w") as fh:
            for seg_idx, seg_report in enumerate(block.segment_reports):
                for diag in seg_report.diagnostics:
                    record = {"segment": seg_idx, **diag.to_dict()}
                    fh.write(json.dumps(record) + "\n")

    report_path = Path(config.output).with_suffix(".filter.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")

    return PipelineResult(
        restored,
        config.output,
        block.filter_params,
        report,
        block.segment_reports,
        block.failed_segments,
        gain,
    )
