import numpy as np
import pytest

from memsarray import assemble_full_array, dnw_like_subarray


@pytest.fixture(scope="session")
def full_array():
    return assemble_full_array(3, 3, seed=42)


@pytest.fixture(scope="session")
def one_panel():
    return assemble_full_array(1, 1, seed=42)


@pytest.fixture(scope="session")
def dnw_sub(full_array):
    sub = dnw_like_subarray(full_array)
    assert sub.size == 140
    return sub


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
