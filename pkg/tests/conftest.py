import numpy as np
import pytest

from coaxlink import dynamics, units
from coaxlink.devicelab import load_qubits


@pytest.fixture(scope="session")
def device_qubits():
    return load_qubits()


@pytest.fixture(scope="session")
def g0():
    return units.mhz_to_rad(5.0)


@pytest.fixture(scope="session")
def link_model():
    return dynamics.reference_link_model("Q1A", "Q3B", t1r_us=26.4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, n_qubits, rank=None):
    d = 2**n_qubits
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = a @ a.conj().T
    return m / np.trace(m)
