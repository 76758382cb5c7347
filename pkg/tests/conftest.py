import numpy as np
import pytest
from scipy.linalg import expm

from erspin.circuits import Register
from erspin.constants import LARMOR_SCALE, NUCLEUS_TABLE, reference_system
from erspin.spinsys import SX, SY, SZ

ACCEPTANCE_LINES: list[str] = []

KHZ_TO_RAD_PER_US = 2 * np.pi * 1e-3


@pytest.fixture(scope="session")
def system():
    return reference_system()


@pytest.fixture(scope="session")
def frame1(system):
    return system.frame(0)


@pytest.fixture(scope="session")
def frame2(system):
    return system.frame(1)


@pytest.fixture(scope="session")
def register(system):
    return Register.from_system(system)


@pytest.fixture(scope="session")
def register_decoupled(system):
    return Register.from_system(system, couple_nucleus=False)


def branch_hamiltonian(name, branch, scale=LARMOR_SCALE):
    """Nuclear Hamiltonian (rad/us) with the electron in state ``branch``, from raw table values."""
    a_par, a_perp, wl, _ = NUCLEUS_TABLE[name]
    w = KHZ_TO_RAD_PER_US * np.array([branch * a_perp, 0.0, scale * wl + branch * a_par])
    return 0.5 * (w[0] * SX + w[1] * SY + w[2] * SZ)


def full_sequence_oracle(name, spacings, phases=None):
    """Electron (x) nucleus propagation with instantaneous electron pi pulses, by 4x4 expm.

    Returns the nuclear blocks for the electron initially up and initially down.
    """
    up, dn = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    h = np.kron(up, branch_hamiltonian(name, +1)) + np.kron(dn, branch_hamiltonian(name, -1))
    pulse_of = {"X": SX, "Y": SY, "-X": -SX, "-Y": -SY}
    phases = phases or ["X"] * (len(spacings) - 1)
    u = np.eye(4, dtype=complex)
    for k, t in enumerate(spacings):
        u = expm(-1j * h * t) @ u
        if k < len(phases):
            u = np.kron(-1j * pulse_of[phases[k]], np.eye(2)) @ u
    blocks = u.reshape(2, 2, 2, 2)
    n = len(spacings) - 1
    # after n pulses an up electron ends up (n even) or down (n odd)
    out_plus = blocks[n % 2, :, 0, :]
    out_minus = blocks[(n + 1) % 2, :, 1, :]
    return out_plus, out_minus


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
