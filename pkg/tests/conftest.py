import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

SR = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, n, sr=SR, amp=0.5, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / sr + phase)
