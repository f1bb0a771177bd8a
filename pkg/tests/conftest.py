import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybrid_inverter.grid import GridSample, GridSignal
from hybrid_inverter.params import InverterParams

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def params():
    return InverterParams()


@pytest.fixture
def sag():
    return GridSignal.sag()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def nominal_sample(params, v_mag=1.0, theta=0.0):
    return GridSample(v_mag, theta, params.omega_0, 0.0)


@pytest.fixture(scope="session")
def sag_truth():
    """Noise-free default sag run (shared, read-only)."""
    from hybrid_inverter.sim import SimConfig, equilibrium_gfl, simulate_hybrid

    p = InverterParams()
    return simulate_hybrid(equilibrium_gfl(p), GridSignal.sag(), p, SimConfig())
