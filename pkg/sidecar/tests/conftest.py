import subprocess
import sys

import numpy as np
import pytest

from blindbwe import external_denoiser_connect


def spawn_gaussian_sidecar(length=4096, rate=22050, timeout=30.0):
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
        str(length),
        "--rate",
        str(rate),
    ]
    return external_denoiser_connect(argv, timeout=timeout)


@pytest.fixture(scope="session")
def gaussian_session():
    client = spawn_gaussian_sidecar()
    yield client
    client.close()


@pytest.fixture
def rng():
    return np.random.default_rng(7)
