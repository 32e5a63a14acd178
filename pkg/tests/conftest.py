import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from firstexit.marginal import DimensionParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

LOG5 = math.log(5.0)


@pytest.fixture
def firm():
    """One coordinate with unit volatility, start log 5 and barrier 0."""
    return DimensionParams(mu=0.0, sigma=1.0, x0=LOG5, barrier=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
