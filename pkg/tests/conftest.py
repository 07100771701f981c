import numpy as np
import pytest

from nsch import build_structured_mesh


@pytest.fixture(scope="session")
def mesh4():
    return build_structured_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_structured_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


# Strang-Fix 7-point rule (degree 5), written out independently of the
# package quadrature; barycentric points and weights summing to 1.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W0, _W1, _W2 = 0.225, 0.132394152788506, 0.125939180544827
SEVEN_POINT_BARY = np.array(
    [[1 / 3, 1 / 3, 1 / 3],
     [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
     [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]
)
SEVEN_POINT_W = np.array([_W0] + [_W1] * 3 + [_W2] * 3)


def seven_point_integral(mesh, values_at):
    """Sum over elements of area * sum_q w_q f(x_q); ``values_at(e, bary)``."""
    total = 0.0
    for e in range(mesh.num_elements):
        vals = np.array([values_at(e, b) for b in SEVEN_POINT_BARY])
        total += mesh.areas[e] * SEVEN_POINT_W @ vals
    return total


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
