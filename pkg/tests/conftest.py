import numpy as np
import pytest

from qfgp.kernels import KernelConfig, tabulate
from qfgp.params import GeometryConfig, preset

DELTA = 0.9
PERIOD = 2.0 * np.pi / DELTA


@pytest.fixture(scope="session")
def metal():
    return preset("reference-metal")


@pytest.fixture(scope="session")
def moving_cfg(metal):
    return KernelConfig(
        material=metal,
        geometry=GeometryConfig(alpha=np.pi / 2, gamma_dip=0.0,
                                gap_a=3e-9, u=0.007))


@pytest.fixture(scope="session")
def short_table(moving_cfg):
    return tabulate(moving_cfg, 3 * PERIOD, 0.02, delta_ratio=DELTA)
