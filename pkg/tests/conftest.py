import numpy as np
import pytest

from pontkoop.basis import BoxDomain, graded_index_set, legendre_basis
from pontkoop.model import double_integrator_lqr, minimize_hamiltonian_control, pontryagin_field, vanderpol, y_vars
from pontkoop.synthesis import synthesize

SQRT3 = np.sqrt(3.0)
LINEAR_INDICES = graded_index_set(4, 5)[1:]

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def vdp():
    return vanderpol()


@pytest.fixture(scope="session")
def vdp_field(vdp):
    return pontryagin_field(vdp, minimize_hamiltonian_control(vdp))


@pytest.fixture(scope="session")
def lqr():
    return double_integrator_lqr()


@pytest.fixture(scope="session")
def lqr_field(lqr):
    return pontryagin_field(lqr, minimize_hamiltonian_control(lqr))


@pytest.fixture(scope="session")
def cube4():
    return BoxDomain.cube(4, 0.5)


@pytest.fixture(scope="session")
def vdp_n4(vdp, cube4):
    return synthesize(vdp, legendre_basis(cube4, LINEAR_INDICES, y_vars(2)))


@pytest.fixture(scope="session")
def vdp_n15(vdp, cube4):
    return synthesize(vdp, legendre_basis(cube4, graded_index_set(4, 15), y_vars(2)))


@pytest.fixture(scope="session")
def lqr_syn(lqr, cube4):
    return synthesize(lqr, legendre_basis(cube4, graded_index_set(4, 5), y_vars(2)))
