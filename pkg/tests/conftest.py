from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"

# worked example: P over labelsets 000..111 (label 1 = most significant bit)
WORKED_FRACTIONS = [Fraction(0), Fraction(1, 3), Fraction(1, 4), Fraction(0), Fraction(1, 4), Fraction(0), Fraction(1, 6), Fraction(0)]
WORKED = np.array([float(f) for f in WORKED_FRACTIONS])

WORKED_HS = [0.611, 0.500, 0.556, 0.444, 0.556, 0.444, 0.500, 0.389]
WORKED_EM = [0.000, 0.333, 0.250, 0.000, 0.250, 0.000, 0.167, 0.000]
WORKED_JS = [0.000, 0.333, 0.333, 0.347, 0.333, 0.347, 0.417, 0.389]


def random_distributions(rng, n, L, sparsity=0.0):
    """Dirichlet draws with random concentration, optionally zeroing some entries."""
    K = 1 << L
    alpha = rng.choice([0.05, 0.3, 1.0, 5.0])
    P = rng.dirichlet(np.full(K, alpha), size=n)
    if sparsity:
        P = P * (rng.random(P.shape) >= sparsity)
        P[P.sum(axis=1) == 0, 0] = 1.0
        P = P / P.sum(axis=1, keepdims=True)
    return P


@pytest.fixture
def worked_example():
    return WORKED.copy()


@pytest.fixture
def data_dir():
    return DATA_DIR
