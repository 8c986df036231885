import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spectracc import dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    """6 scenes x 3 illuminants at 32x32, fast enough for unit tests."""
    return dataset.build_dataset(dataset.DatasetConfig(n_scenes=6, n_illuminants=3, size=32, ms_factor=8))
