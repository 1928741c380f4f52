import numpy as np
import pytest

from blindbwe import AudioBuffer, GaussianPrior, StftPlan


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def plan():
    return StftPlan()


@pytest.fixture
def small_plan():
    return StftPlan(window_len=512, hop=256)


@pytest.fixture
def small_prior():
    return GaussianPrior.with_spectral_knee(4096, 22050)


def make_noise(n, rate=22050, seed=0, scale=1.0):
    gen = np.random.default_rng(seed)
    return AudioBuffer(scale * gen.standard_normal(n), rate)
