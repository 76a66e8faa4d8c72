import numpy as np
import pytest

from pesinchart.chains import stationary_chart
from pesinchart.config import RunConfig
from pesinchart.pipeline import Run, run_command
from pesinchart.system import make_builtin


@pytest.fixture(scope="session")
def cat2():
    return make_builtin("cat2")


@pytest.fixture(scope="session")
def pcat2():
    return make_builtin("pcat2(0.01)")


@pytest.fixture(scope="session")
def plastic3():
    return make_builtin("plastic3")


@pytest.fixture(scope="session")
def cat2_origin(cat2):
    return stationary_chart(cat2, np.zeros(2), 0.5, 0.1)


@pytest.fixture(scope="session")
def pcat2_origin(pcat2):
    return stationary_chart(pcat2, np.zeros(2), 0.5, 0.1)


@pytest.fixture(scope="session")
def pcat2_run(tmp_path_factory):
    """Default pcat2(0.01) run of every check suite; stages are memoized and shared across tests."""
    return run_command(RunConfig(), "check", tmp_path_factory.mktemp("pcat2_check"), "all")


@pytest.fixture(scope="session")
def cat2_run():
    return Run(RunConfig(system="cat2", seed=1))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_record():
    def record(line: str):
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
