import os

import numpy as np
import pytest

os.environ.setdefault(
    "GRAPHSLIM_DATA",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data"))

from graphslim.data import SbmParams, load_dataset, sbm_generate


@pytest.fixture(scope="session")
def cora():
    return load_dataset("cora")


@pytest.fixture(scope="session")
def citeseer():
    return load_dataset("citeseer")


@pytest.fixture(scope="session")
def sbm_small():
    # three well-separated blocks, enough signal for every method to learn
    return sbm_generate(SbmParams(block_sizes=(40, 40, 40), p_intra=0.15,
                                  p_inter=0.01, dim=16, separation=1.2,
                                  noise=1.0, seed=7))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
