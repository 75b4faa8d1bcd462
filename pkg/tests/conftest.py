import numpy as np
import pytest


def random_psd(rng, n, rank=None):
    """Random Hermitian positive semidefinite matrix of the given rank."""
    rank = n if rank is None else rank
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return a @ a.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
