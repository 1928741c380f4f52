"""Sigma-conditional convolutional denoiser with variance preconditioning.

A small stack of dilated 1-d convolutions, FiLM-conditioned on log(sigma),
wrapped in the standard skip/output/input scalings so the network learns a
well-scaled residual at every noise level:

    D(x; sigma) = c_skip * x + c_out * F(c_in * x, log(sigma)/4)

with c_skip = sd^2/(sigma^2+sd^2), c_out = sigma*sd/sqrt(sigma^2+sd^2),
c_in = 1/sqrt(sigma^2+sd^2). As sigma -> 0 the skip dominates, so
D(x; 0) ~= x by construction.
"""

from __future__ import annotations

import torch
import torch.nn as nn

EMBED_DIM = 64


class _FilmBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, kernel: int = 5):
        super().__init__()
        pad = (kernel - 1) // 2 * dilation
        self.conv = nn.Conv1d(channels, channels, kernel, padding=pad, dilation=dilation)
        self.film = nn.Linear(EMBED_DIM, 2 * channels)
        self.act = nn.GELU()

    def forward(self, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.film(emb).unsqueeze(-1).chunk(2, dim=1)
        return h + self.act(self.conv(h)) * (1.0 + scale) + shift


class ConvDenoiser(nn.Module):
    def __init__(
        self,
        channels: int = 16,
        n_blocks: int = 6,
        kernel: int = 5,
        sigma_data: float = 0.07,
    ):
        super().__init__()
        self.sigma_data = float(sigma_data)
        self.embed = nn.Sequential(
            nn.Linear(1, EMBED_DIM), nn.GELU(), nn.Linear(EMBED_DIM, EMBED_DIM)
        )
        self.inp = nn.Conv1d(1, channels, kernel, padding=(kernel - 1) // 2)
        self.blocks = nn.ModuleList(
            _FilmBlock(channels, 2**i, kernel) for i in range(n_blocks)
        )
        self.out = nn.Conv1d(channels, 1, kernel, padding=(kernel - 1) // 2)

    def backbone(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        emb = self.embed(torch.log(sigma).view(-1, 1) / 4.0)
        h = self.inp(x.unsqueeze(1))
        for block in self.blocks:
            h = block(h, emb)
        return self.out(h).squeeze(1)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        """Denoised estimate for batched signals (B, N) at noise levels (B,)."""
        sigma = sigma.clamp_min(1e-8)
        sd = self.sigma_data
        var = sigma**2 + sd**2
        c_skip = (sd**2 / var).view(-1, 1)
        c_out = (sigma * sd / torch.sqrt(var)).view(-1, 1)
        c_in = (1.0 / torch.sqrt(var)).view(-1, 1)
        return c_skip * x + c_out * self.backbone(c_in * x, sigma)
