import numpy as np
import pytest

from mh2m.coefficients import CoefficientField
from mh2m.driver import build_hierarchy, run_mh2m
from mh2m.mesh import CoarseMesh, partition_faces
from mh2m.oracles import get_case

UNIT_SQUARE = (0.0, 1.0, 0.0, 1.0)


def right_triangle_mesh():
    return CoarseMesh.from_triangles(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


@pytest.fixture
def right_triangle():
    mesh = right_triangle_mesh()
    return mesh, partition_faces(mesh, 1, 1)


@pytest.fixture
def identity():
    return CoefficientField("constant", value=1.0)


@pytest.fixture(scope="session")
def sine_case():
    return get_case("sine")


@pytest.fixture(scope="session")
def sine_run_k0():
    case = get_case("sine")
    hier = build_hierarchy(UNIT_SQUARE, 0.5, 1, 1, h_fraction=0.25)
    return run_mh2m(hier, 0, case.A, case.f), case


@pytest.fixture(scope="session")
def sine_run_k1():
    case = get_case("sine")
    hier = build_hierarchy(UNIT_SQUARE, 0.5, 1, 2, h_fraction=0.25)
    return run_mh2m(hier, 1, case.A, case.f), case


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
