import numpy as np
import pytest

from moserlab import mdspace as md

# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid8():
    """8x8 unit lattice with a centred nested family."""
    space = md.build_grid_space([8, 8])
    centre = md.lattice_index([8, 8], [4, 4])
    fam = md.nested_family(space, centre, 3.0, 0.5, (0.5, 0.75, 1.0, 1.5), 0.25)
    return space, fam
