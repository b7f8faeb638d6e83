import numpy as np
import pytest
from prefect.testing.utilities import prefect_test_harness

from orthomads.geometry import Bounds


@pytest.fixture(scope="session")
def prefect_harness():
    with prefect_test_harness():
        yield


@pytest.fixture
def svm_box() -> Bounds:
    return Bounds(lower=(0.01, 0.01), upper=(100.01, 100.01))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
