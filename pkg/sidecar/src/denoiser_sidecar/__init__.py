"""External denoiser server speaking the framed denoiser protocol.

Two backends: the analytic Gaussian denoiser (for conformance testing
against the restoration engine's in-process prior) and a small trained
sigma-conditional convolutional denoiser whose VJPs come from autodiff.
"""

from denoiser_sidecar.data import ToyDatasetSpec, average_spectral_slope, generate
from denoiser_sidecar.gaussian import GaussianDenoiser
from denoiser_sidecar.model import ConvDenoiser
from denoiser_sidecar.train import (
    TrainSpec,
    TrainingDiverged,
    holdout_mse,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
