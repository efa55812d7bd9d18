import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from modules.crem.speedfn import SpeedFunction  # noqa: E402


@pytest.fixture
def exp3():
    return SpeedFunction.exp_family(3.0)


@pytest.fixture
def isotropic_gaussian():
    """Draw n standard isotropic complex Gaussians (E|Z|^2 = 1)."""

    def draw(n, seed=0):
        rng = np.random.default_rng(seed)
        return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)

    return draw
