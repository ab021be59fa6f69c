import pytest

from twophase_tdma.topology import from_edges, from_positions


@pytest.fixture
def star():
    # center 0 at the origin, four leaves 40 m out on the axes, range 50 m
    return from_positions([(0, 0), (40, 0), (0, 40), (-40, 0), (0, -40)], 50.0)


@pytest.fixture
def chain3():
    return from_edges(3, [(0, 1), (1, 2)])


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed again in the terminal summary."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"acceptance {criterion:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[criterion] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
