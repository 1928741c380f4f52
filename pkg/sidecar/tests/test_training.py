"""Dataset properties and training behavior (short runs; the full-length
criteria live in test_acceptance.py)."""

import numpy as np
import pytest
import torch

from denoiser_sidecar import (
    ConvDenoiser,
    ToyDatasetSpec,
    TrainSpec,
    average_spectral_slope,
    generate,
    holdout_mse,
    load_checkpoint,
    save_checkpoint,
    train,
)


class TestDataset:
    def test_shapes_and_normalization(self):
        spec = ToyDatasetSpec(n_signals=8, length=2048, seed=1)
        data = generate(spec)
        assert data.shape == (8, 2048)
        assert np.allclose(data.std(axis=1), spec.sigma_data, rtol=1e-4)

    def test_frequency_decaying_average_spectrum(self):
        spec = ToyDatasetSpec(n_signals=64, length=2048, seed=2)
        slope = average_spectral_slope(generate(spec), spec.sample_rate)
        assert slope < 0

    def test_deterministic(self):
        spec = ToyDatasetSpec(n_signals=4, length=1024, seed=3)
        assert np.array_equal(generate(spec), generate(spec))


class TestModel:
    def test_small_sigma_near_identity_untrained(self):
        torch.manual_seed(0)
        model = ConvDenoiser(channels=8, n_blocks=3)
        x = torch.randn(2, 1024) * 0.07
        out = model(x, torch.full((2,), 1e-4))
        rel = (out - x).norm() / x.norm()
        assert rel < 0.05  # skip scaling dominates regardless of weights

    def test_output_shape(self):
        model = ConvDenoiser(channels=8, n_blocks=3)
        x = torch.randn(3, 512)
        assert model(x, torch.full((3,), 0.1)).shape == (3, 512)


class TestShortTraining:
    def test_training_improves_over_initialization(self):
        spec = TrainSpec(
            steps=150,
            dataset=ToyDatasetSpec(n_signals=128, length=2048, seed=0),
            holdout=32,
        )
        torch.manual_seed(spec.seed)
        untrained = ConvDenoiser(spec.channels, spec.n_blocks, sigma_data=0.07)
        heldout = torch.from_numpy(
            generate(ToyDatasetSpec(n_signals=32, length=2048, seed=9999))
        )
        before = holdout_mse(untrained, heldout, 0.1)
        model, summary = train(spec)
        after = holdout_mse(model, heldout, 0.1)
        assert after < before

    def test_checkpoint_round_trip(self, tmp_path):
        spec = TrainSpec(
            steps=20, dataset=ToyDatasetSpec(n_signals=16, length=1024, seed=0), holdout=8
        )
        model, summary = train(spec)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, spec, summary)
        loaded, meta = load_checkpoint(path)
        assert meta["supported_length"] == 1024
        assert meta["sample_rate"] == 22050
        x = torch.randn(1, 1024)
        sigma = torch.tensor([0.1])
        assert torch.allclose(model(x, sigma), loaded(x, sigma))
