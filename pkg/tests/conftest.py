import numpy as np
import pytest

from versal_gemm.core import Int16Matrix


def rand_matrix(rng, rows, cols, lo=-32768, hi=32767, ld=None):
    return Int16Matrix.from_array(rng.integers(lo, hi + 1, size=(rows, cols)), ld=ld)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
