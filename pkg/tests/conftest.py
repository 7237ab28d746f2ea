import numpy as np
import pytest

from qdgm.graph import NetworkTopology, lazy_metropolis, path_topology
from qdgm.objective import build_objective, well_conditioned_instance

# collected by the acceptance tests; printed in the terminal summary so each
# criterion yields one visible pass/fail line even when capture is on
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def report_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {detail}")


@pytest.fixture
def path3():
    return path_topology(3)


@pytest.fixture
def triangle():
    return NetworkTopology.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def pair():
    return NetworkTopology.from_edges(2, [(0, 1)])


@pytest.fixture
def hand_objective():
    # two orthogonal agents; optimum (1, 2) with zero residual
    return build_objective(np.array([[1.0, 0.0], [0.0, 1.0]]),
                           np.array([1.0, 2.0]))


@pytest.fixture
def small_instance():
    return well_conditioned_instance(4, 2)


@pytest.fixture
def small_mixing(small_instance):
    return lazy_metropolis(path_topology(small_instance.n))
