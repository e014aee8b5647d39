import math

import numpy as np
import pytest

from hetdp_market import _kernels
from hetdp_market.core_types import HyperParams, RngSpec
from hetdp_market.sensitivity import Uniform


@pytest.fixture(params=sorted(_kernels.backends()))
def kernels(request):
    """Each available kernel backend in turn."""
    return _kernels.backends()[request.param]


@pytest.fixture
def unif01():
    return Uniform(0.0, 1.0)


@pytest.fixture
def paper_dist():
    return Uniform(math.exp(-4), 5 * math.exp(-4))


@pytest.fixture
def params():
    return HyperParams()


@pytest.fixture
def rng():
    return RngSpec(1234)


class PsiConst:
    """Distribution stand-in with psi identically psi0 (homogeneous sellers)."""

    upper = 1.0

    def __init__(self, psi0=1.0):
        self.psi0 = psi0

    def psi(self, c):
        c = np.asarray(c, dtype=float)
        out = np.full_like(c, self.psi0)
        return out if out.ndim else float(out)


@pytest.fixture
def psi_const():
    return PsiConst
