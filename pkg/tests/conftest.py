import numpy as np
import pytest

from sada import _backend
from sada.denoiser import GaussianMixture, GMMDenoiser, TokenDenoiser, TokenModel
from sada.schedule import NoiseSchedule

BACKENDS = ["python"]
try:
    _backend.load("cython")
    BACKENDS.append("cython")
except ImportError:  # extension not built: the fallback is still exercised
    pass


@pytest.fixture(params=BACKENDS)
def kern(request):
    return _backend.load(request.param)


@pytest.fixture(scope="session")
def vp():
    return NoiseSchedule("vp-linear")


@pytest.fixture(scope="session")
def flow():
    return NoiseSchedule("flow-linear")


@pytest.fixture(scope="session")
def gmm():
    return GaussianMixture.random(64, 4, seed=0, spread=1.0, variance=0.05)


@pytest.fixture(scope="session")
def gmm_den(gmm, vp):
    return GMMDenoiser(gmm, vp, (4, 4))


@pytest.fixture(scope="session")
def flow_den(gmm, flow):
    return GMMDenoiser(gmm, flow, (4, 4), prediction="velocity")


@pytest.fixture(scope="session")
def small_model():
    return TokenModel(num_layers=4, n_tokens=16, channels=8, seed=3)


@pytest.fixture(scope="session")
def token_den(small_model, vp):
    return TokenDenoiser(small_model, vp, (4, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
