import numpy as np
import pytest

from pwave_vae.experiments import SynthParams, make_synthetic_dataset, prepare_data


@pytest.fixture(scope="session")
def small_records():
    return make_synthetic_dataset(12, seed=3, params=SynthParams(snr=(3.0, 6.0)))


@pytest.fixture(scope="session")
def small_data(small_records):
    return prepare_data(small_records, axes=(0,), ratios=(0.5, 0.25, 0.25), seed=0, neg_stride_ms=1000)


@pytest.fixture(scope="session")
def tiny_batch():
    return np.random.default_rng(0).random((8, 32, 92)).astype(np.float32)
