"""Sidecar acceptance: protocol conformance with the in-process oracle, and
the learned-prior end-to-end blind recovery through the real wire.

Each criterion prints `[ACCEPTANCE] <name>: PASS/FAIL`. The trained model is
built once per session and shared; the full run (training included) stays
well under the hour budget on a laptop CPU.
"""

import subprocess
import sys

import numpy as np
import pytest
import torch

from blindbwe import (
    AudioBuffer,
    FilterBounds,
    FilterParams,
    GaussianPrior,
    SamplerConfig,
    StftPlan,
    apply_filter,
    blind_sample,
    external_denoiser_connect,
    project,
)
from denoiser_sidecar import ToyDatasetSpec, TrainSpec, generate, holdout_mse, save_checkpoint, train

FS = 22050


class _gate:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"[ACCEPTANCE] {self.name}: {verdict}")
        return False


def test_protocol_conformance():
    with _gate("sidecar gaussian matches in-process denoiser (100 triples, 1e-6)"):
        length = 4096
        oracle = GaussianPrior.with_spectral_knee(length, FS)
        client = external_denoiser_connect(
            [
                sys.executable,
                "-m",
                "denoiser_sidecar.cli",
                "serve",
                "--model",
                "gaussian",
                "--listen",
                "pipe",
                "--length",
                str(length),
            ],
            timeout=60.0,
        )
        try:
            gen = np.random.default_rng(123)
            for _ in range(50):
                sigma = float(gen.uniform(1e-4, 1.0))
                x = AudioBuffer(0.07 * gen.standard_normal(length), FS)
                v = AudioBuffer(gen.standard_normal(length), FS)
                assert (
                    np.max(
                        np.abs(
                            client.denoise(x, sigma).samples
                            - oracle.denoise(x, sigma).samples
                        )
                    )
                    <= 1e-6
                )
                assert (
                    np.max(
                        np.abs(
                            client.vjp(x, sigma, v).samples
                            - oracle.vjp(x, sigma, v).samples
                        )
                    )
                    <= 1e-6
                )
        finally:
            client.close()


@pytest.fixture(scope="session")
def trained_checkpoint(tmp_path_factory):
    spec = TrainSpec(
        steps=2000,
        dataset=ToyDatasetSpec(n_signals=1024, length=8192, seed=0),
    )
    model, summary = train(spec)
    path = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    save_checkpoint(path, model, spec, summary)
    return model, spec, summary, str(path)


def test_training_halves_identity_mse(trained_checkpoint):
    with _gate("toy training: held-out MSE at sigma=0.1 at least 50% below identity"):
        _, _, summary, _ = trained_checkpoint
        assert summary["holdout_mse_0p1"] <= 0.5 * summary["identity_mse_0p1"]


def test_small_sigma_consistency(trained_checkpoint):
    with _gate("toy denoiser: denoise(x, sigma->0) ~= x within 5%"):
        model, spec, _, _ = trained_checkpoint
        heldout = torch.from_numpy(
            generate(
                ToyDatasetSpec(
                    n_signals=16, length=spec.dataset.length, seed=31337
                )
            )
        )
        with torch.no_grad():
            out = model(heldout, torch.full((heldout.shape[0],), 1e-4))
        rel = float((out - heldout).norm() / heldout.norm())
        assert rel <= 0.05


def test_end_to_end_blind_recovery(trained_checkpoint):
    with _gate("learned prior: blind 1 kHz cutoff within +-1/2 octave in >= 7/10"):
        _, spec, _, ckpt_path = trained_checkpoint
        length = spec.dataset.length
        client = external_denoiser_connect(
            [
                sys.executable,
                "-m",
                "denoiser_sidecar.cli",
                "serve",
                "--model",
                ckpt_path,
                "--listen",
                "pipe",
            ],
            timeout=120.0,
        )
        try:
            assert client.supported_length == length
            bounds = FilterBounds.for_rate(FS)
            phi_star = project(FilterParams([1000.0], [-20.0]), bounds)
            plan = StftPlan(512, 256)
            heldout = generate(ToyDatasetSpec(n_signals=10, length=length, seed=777))
            recovered = 0
            for seed in range(10):
                x_star = AudioBuffer(heldout[seed].astype(np.float64), FS)
                y = apply_filter(x_star, phi_star, plan)
                config = SamplerConfig(
                    seed=seed, window_len=512, hop=256, xi_prime=0.4
                )
                report = blind_sample(y, client, config)
                if report.failure_flag:
                    continue
                fc1 = report.final_filter.cutoffs_hz[0]
                if abs(np.log2(fc1 / 1000.0)) <= 0.5:
                    recovered += 1
            assert recovered >= 7
        finally:
            client.close()
