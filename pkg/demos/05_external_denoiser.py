"""Restoration through an external denoiser process.

The sampler consumes any denoiser speaking the framed wire protocol
(HELLO/DENOISE/VJP over a pipe or TCP). Here we spawn the sidecar package's
server in analytic-gaussian mode and run a blind restoration against it;
results match the in-process prior to float32 precision.

Requires the sidecar package:  pip install -e sidecar/
Run:  python demos/05_external_denoiser.py
"""

import shutil
import sys

import numpy as np

from blindbwe import (
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

FS = 22050
N = 16384

try:
    import denoiser_sidecar  # noqa: F401
except ImportError:
    sys.exit("sidecar package not installed; run: pip install -e sidecar/")

argv = [
    sys.executable,
    "-m",
    "denoiser_sidecar.cli",
    "serve",
    "--model",
    "gaussian",
    "--listen",
    "pipe",
    "--length",
    str(N),
]
print("spawning:", " ".join(argv[-7:]))
client = external_denoiser_connect(argv, timeout=60.0)
print(f"handshake: rate={client.sample_rate}, length={client.supported_length}, "
      f"sigma_data={client.sigma_data:.4f}")

truth = project(FilterParams([1000.0], [-20.0]), FilterBounds.for_rate(FS))
local_prior = GaussianPrior.with_spectral_knee(N, FS)
x_star = local_prior.sample(np.random.default_rng(5))
y = apply_filter(x_star, truth, StftPlan(1024, 512))

config = SamplerConfig(seed=0, window_len=1024, hop=512)
remote_report = blind_sample(y, client, config)
client.close()

local_report = blind_sample(y, local_prior, config)
diff = np.max(np.abs(remote_report.x0.samples - local_report.x0.samples))
print(f"\nremote fc1 = {remote_report.final_filter.cutoffs_hz[0]:.1f} Hz, "
      f"local fc1 = {local_report.final_filter.cutoffs_hz[0]:.1f} Hz")
print(f"max |remote - local| over the restored audio: {diff:.2e} "
      "(float32 wire quantization)")
