import numpy as np
import pytest

from fedphish import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per available kernel backend."""
    with kernels.use(request.param) as mod:
        yield mod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
