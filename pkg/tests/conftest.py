import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, max_side=12, levels=None):
    h, w = rng.integers(1, max_side + 1, 2)
    if levels is None:
        return rng.random((h, w))
    return rng.integers(0, levels, (h, w)) / max(levels - 1, 1)
