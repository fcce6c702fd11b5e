import numpy as np
import pytest

from mvtf import tensor as T


@pytest.fixture(autouse=True)
def force_f64():
    """Numerical contracts are stated in 64-bit; individual tests opt into
    32-bit explicitly when they exercise training."""
    prev = T.default_dtype()
    T.set_default_dtype("f64")
    yield
    T.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(0xA5A5)
