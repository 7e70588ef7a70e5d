import numpy as np
import pytest

from alereact import geometry as geo
from alereact.mesh import Domain, generate_fitted_mesh
from alereact.params import default_network, derive_parameters, validate_network

RELAX_RAW = dict(Re=10, Ca=0.1, Bi=0.4, Da=1, Pe=1, Pe_G=1, E=0.1, rho_plus=10, rho_minus=1,
                 eta_plus=10, eta_minus=1, k_r=1, k_d=1, D_C_plus=0.5, D_C_minus=1)


@pytest.fixture(scope="session")
def relax_params():
    return derive_parameters(RELAX_RAW)


@pytest.fixture(scope="session")
def unit_domain():
    return Domain(-0.5, 0.5, -0.5, 0.5)


@pytest.fixture(scope="session")
def circle_mesh(unit_domain):
    X = geo.circle_polyline((0.0, 0.0), 0.25, 32)
    return generate_fitted_mesh(unit_domain, [X], geo.perimeter(X) / 32,
                                boundary_kinds=dict(left="wall", right="wall", bottom="free", top="free"))


@pytest.fixture(scope="session")
def relax_network(relax_params):
    init = dict(C=0.8, A_G=0.8, B_G=0.8, C_G=0.8)
    return validate_network(default_network(relax_params, init), 1)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record_verdict(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
