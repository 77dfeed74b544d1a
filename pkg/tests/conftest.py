import math
from pathlib import Path

import pytest

from blowuplab.params import ProblemParams, select_parameters

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# lines printed in the terminal summary by the acceptance suite
CRITERIA = {}


def record_criterion(key, passed: bool, detail: str) -> None:
    CRITERIA[key] = f"{'PASS' if passed else 'FAIL'}  criterion {key[1]}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])


N1_CERTIFIABLE = ProblemParams(1, 1.0, 2.0, 1.0, 1.0, 4.0 / math.sqrt(3.0))
N2_ACCEPTANCE = ProblemParams(2, 1.0, 1.0, 1.0, 2.0, 2.0 * math.pi)


@pytest.fixture(scope="session")
def n1_case():
    params, report = select_parameters(N1_CERTIFIABLE)
    assert params is not None, report
    return N1_CERTIFIABLE, params


@pytest.fixture(scope="session")
def n2_case():
    params, report = select_parameters(N2_ACCEPTANCE)
    assert params is not None, report
    return N2_ACCEPTANCE, params


# five certified sets spanning both branches of the selector
CERTIFIED_PROBLEMS = [
    N1_CERTIFIABLE,
    ProblemParams(1, 1.0, 3.0, 1.0, 1.0, 2.0),
    ProblemParams(3, 1.0, 2.0, 1.0, 1.0, 4.0 * math.pi),
    N2_ACCEPTANCE,
    ProblemParams(2, 1.0, 2.0, 1.5, 1.5, 2.0 * math.pi),
]


@pytest.fixture(scope="session")
def certified_sets():
    out = []
    for pr in CERTIFIED_PROBLEMS:
        params, report = select_parameters(pr)
        assert params is not None, (pr, report)
        out.append((pr, params))
    return out


def _config_run(path):
    from blowuplab.cli import _simulate
    from blowuplab.config import load_config
    problem, params, _, traj, _ = _simulate(load_config(path))
    return problem, params, traj


@pytest.fixture(scope="session")
def n1_run():
    return _config_run(CONFIGS / "n1_certifiable.ini")


@pytest.fixture(scope="session")
def n2_run():
    return _config_run(CONFIGS / "n2.ini")
