import numpy as np
import pytest

from photonpurity.correlations import filtered_g2_zero, map_grid, unfiltered_g2_zero
from photonpurity.model import (
    BiexcitonConfig,
    EXCITON_V_ONLY,
    GaussianPulse,
    SensorConfig,
    TwoLevelConfig,
    build_biexciton,
    build_two_level,
)

ACCEPTANCE_TAUS = (0.02, 0.05, 0.2)
FOURLEVEL_BINDING = 300.0


def two_level_system(tau, theta=np.pi):
    return build_two_level(TwoLevelConfig(), GaussianPulse(theta, tau))


def fourlevel_system(tau=0.01, theta=np.pi):
    return build_biexciton(BiexcitonConfig(binding_energy=FOURLEVEL_BINDING),
                           GaussianPulse(theta, tau))


@pytest.fixture(scope="session")
def tls_g2():
    """Cached filtered g2[0; Gamma] of the resonantly driven two-level system
    at pulse area pi; epsilon-halving check enabled on every point."""
    cache = {}

    def get(tau, gamma):
        key = (round(tau, 6), round(gamma, 6))
        if key not in cache:
            cache[key] = filtered_g2_zero(
                two_level_system(tau), SensorConfig(0.0, gamma), check_convergence=True
            )
        return cache[key]

    get.cache = cache
    return get


@pytest.fixture(scope="session")
def tls_unfiltered():
    cache = {}

    def get(tau):
        key = round(tau, 6)
        if key not in cache:
            cache[key] = unfiltered_g2_zero(two_level_system(tau))
        return cache[key]

    get.cache = cache
    return get


@pytest.fixture(scope="session")
def fourlevel_g2():
    """Cached exciton-line filtered g2 of the cascade at the two-photon
    resonance (sensor on the exciton-to-ground line)."""
    cache = {}
    system = fourlevel_system()

    def get(gamma):
        key = round(gamma, 6)
        if key not in cache:
            cache[key] = filtered_g2_zero(
                system,
                SensorConfig(FOURLEVEL_BINDING / 2.0, gamma),
                observed=EXCITON_V_ONLY,
                check_convergence=True,
            )
        return cache[key]

    get.cache = cache
    return get


def acceptance_line(num, name, ok, detail=""):
    state = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num:02d} {name}: {state}  {detail}")
    return ok
