import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_batch(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((d, m))
    return z / np.linalg.norm(z, axis=0)
