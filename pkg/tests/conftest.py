import numpy as np
import pytest

from wbdoa.model import ModelConfig
from wbdoa.signals import ArrayGeometry, FilterConfig


@pytest.fixture
def tiny_geom():
    return ArrayGeometry(num_sensors=3, spacing=0.5, wave_speed=1500.0, sample_rate=3000.0)


@pytest.fixture
def tiny_cfg(tiny_geom):
    """Small model with filter_len=1 so the frequency path is exact."""
    return ModelConfig(geometry=tiny_geom, signal=FilterConfig(n_samples=8, filter_len=1))


def random_stripe(rng, rows, cols, length):
    from wbdoa.stripe import StripeMatrix

    data = rng.standard_normal((rows, cols, length)) + 1j * rng.standard_normal((rows, cols, length))
    return StripeMatrix(data)


def random_pd_stripe(rng, k, length, sensors=3):
    """T^{-1} + S^H S for a random steering-like stripe: always Hermitian PD."""
    from wbdoa.stripe import StripeMatrix, gram

    s = random_stripe(rng, sensors, k, length)
    reg = gram(s).data
    idx = np.arange(k)
    reg[idx, idx, :] += rng.uniform(0.2, 2.0, size=(k, 1))
    return StripeMatrix(reg)
