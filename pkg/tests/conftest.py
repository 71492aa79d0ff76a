import numpy as np
import pytest

from eabcf import abc_smc, synthetic


@pytest.fixture(scope="session")
def concave_pair():
    """Noiseless ACC pair planted with a concave deviation profile."""
    pair, theta, params = synthetic.synthetic_pair("concave", cls="ACC", seed=3,
                                                   noise_sigma=0.0)
    return pair, theta, params


@pytest.fixture(scope="session")
def noisy_pair():
    pair, theta, params = synthetic.synthetic_pair("concave", cls="ACC", seed=7,
                                                   noise_sigma=0.1)
    return pair, theta, params


@pytest.fixture(scope="session")
def quick_population(noisy_pair):
    """A small calibrated population shared by metric tests (k=150)."""
    pair, _, params = noisy_pair
    prior = abc_smc.PriorSpec.acc_default()
    data = [abc_smc.prepare_pair(pair, params)]
    pop, trace = abc_smc.run_calibration(data, prior, params, k=150, lam=0.95,
                                         seed=11)
    return pop, trace


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
