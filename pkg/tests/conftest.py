import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "ci", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

from convinv.forward import BlurBank  # noqa: E402


def random_kernels(rng, K, S, max_size=3):
    out = []
    for _ in range(K):
        row = []
        for _ in range(S):
            h, w = rng.integers(1, max_size + 1, size=2)
            row.append(rng.standard_normal((h, w)))
        out.append(row)
    return out


def random_bank(rng, K, S, N, max_size=3):
    return BlurBank(random_kernels(rng, K, S, max_size), N)


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)),
                                                 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
