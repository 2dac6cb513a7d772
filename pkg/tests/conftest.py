import numpy as np
import pytest

from taskattn.data import SyntheticTaskConfig, gen_synthetic
from taskattn.kernels import available_backends


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    return available_backends()[request.param]


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticTaskConfig(n_domains=2, n_train=120, n_dev=40, n_test=40,
                              n_labeling_train=80, n_labeling_dev=20, n_labeling_test=20, seed=3)
    return gen_synthetic(cfg)
