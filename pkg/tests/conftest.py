import numpy as np
import pytest

from ocschur import mesh_fem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def heat4():
    mesh = mesh_fem.build_unit_square_mesh(4)
    return mesh_fem.assemble_operators(mesh, mesh_fem.Physics.heat())


@pytest.fixture(scope="session")
def heat8():
    mesh = mesh_fem.build_unit_square_mesh(8)
    return mesh_fem.assemble_operators(mesh, mesh_fem.Physics.heat())


# one pass/fail line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
