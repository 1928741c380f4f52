"""Training loop for the toy denoiser.

Noise levels are drawn log-normally around the data scale and the squared
error is weighted by (sigma^2 + sd^2)/(sigma*sd)^2, which makes every noise
level contribute a comparably scaled objective. Checkpoints carry the model
config so the server can rebuild the network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch

from denoiser_sidecar.data import ToyDatasetSpec, generate
from denoiser_sidecar.model import ConvDenoiser


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite at step {step} ({loss})")
        self.step = step


@dataclass
class TrainSpec:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 2e-3
    log_sigma_mean: float = -2.7
    log_sigma_std: float = 1.4
    sigma_clip: tuple[float, float] = (1e-4, 5.0)
    channels: int = 16
    n_blocks: int = 6
    holdout: int = 64
    seed: int = 0
    dataset: ToyDatasetSpec = field(default_factory=ToyDatasetSpec)


def _sample_sigmas(spec: TrainSpec, count: int, gen: torch.Generator) -> torch.Tensor:
    lns = torch.randn(count, generator=gen) * spec.log_sigma_std + spec.log_sigma_mean
    return lns.exp().clamp(*spec.sigma_clip)


def holdout_mse(model: ConvDenoiser, signals: torch.Tensor, sigma: float, seed: int = 1) -> float:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        sig = torch.full((signals.shape[0],), sigma)
        noisy = signals + sigma * torch.randn(signals.shape, generator=gen)
        estimate = model(noisy, sig)
        return float(((estimate - signals) ** 2).mean())


def train(spec: TrainSpec, log_every: int = 0) -> tuple[ConvDenoiser, dict]:
    """Train from scratch; returns the model and a summary dict."""
    torch.manual_seed(spec.seed)
    gen = torch.Generator().manual_seed(spec.seed + 1)
    sd = spec.dataset.sigma_data

    data = torch.from_numpy(generate(spec.dataset))
    heldout_spec = ToyDatasetSpec(
        **{**asdict(spec.dataset), "n_signals": spec.holdout, "seed": spec.dataset.seed + 9999}
    )
    heldout = torch.from_numpy(generate(heldout_spec))

    model = ConvDenoiser(spec.channels, spec.n_blocks, sigma_data=sd)
    opt = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)

    for step in range(spec.steps):
        idx = torch.randint(0, data.shape[0], (spec.batch_size,), generator=gen)
        clean = data[idx]
        sigma = _sample_sigmas(spec, spec.batch_size, gen)
        noisy = clean + sigma.view(-1, 1) * torch.randn(clean.shape, generator=gen)
        estimate = model(noisy, sigma)
        weight = ((sigma**2 + sd**2) / (sigma * sd) ** 2).view(-1, 1)
        loss = (weight * (estimate - clean) ** 2).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged(step, float(loss))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {loss.item():.4f}")

    model.eval()
    summary = {
        "holdout_mse_0p1": holdout_mse(model, heldout, 0.1),
        "identity_mse_0p1": 0.1**2,
        "steps": spec.steps,
    }
    return model, summary


def save_checkpoint(path, model: ConvDenoiser, spec: TrainSpec, summary: dict) -> None:
    torch.save(
        {
            "state_dict": model.state_dict(),
            "channels": spec.channels,
            "n_blocks": spec.n_blocks,
            "sigma_data": spec.dataset.sigma_data,
            "supported_length": spec.dataset.length,
            "sample_rate": spec.dataset.sample_rate,
            "summary": summary,
        },
        path,
    )


def load_checkpoint(path) -> tuple[ConvDenoiser, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = ConvDenoiser(
        channels=blob["channels"],
        n_blocks=blob["n_blocks"],
        sigma_data=blob["sigma_data"],
    )
    model.load_state_dict(blob["state_dict"])
    model.eval()
    meta = {
        "sigma_data": blob["sigma_data"],
        "supported_length": blob["supported_length"],
        "sample_rate": blob["sample_rate"],
        "summary": blob.get("summary", {}),
    }
    return model, meta
