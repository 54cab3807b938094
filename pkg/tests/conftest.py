import numpy as np
import pytest

from dropkan.layers import build_network


# acceptance results collected during the run, printed at the end
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``acceptance(number, name, passed, detail)`` stores and prints one result line."""

    def record(criterion: int, name: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[criterion] = (name, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} {criterion}. {name}  {detail}".rstrip())
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {key}. {name}  {detail}".rstrip())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    return build_network([3, 4, 2], rng, sigma=0.5)
