import pytest

from stochmech.core import params_from_beta, params_from_nu
from stochmech.states import catalog

NU_SWEEP = (0.25, 0.5, 1.0, 2.0)
BETA_LADDER = (-2.0, 0.0, 1.0, 1.5)
Z_LIST = (0.5, 1.0, 2.0, 4.0)


@pytest.fixture
def unscaled():
    return params_from_beta(0.0)


@pytest.fixture(params=NU_SWEEP, ids=lambda v: f"nu={v}")
def nu_params(request):
    return params_from_nu(request.param)


@pytest.fixture
def ho():
    return catalog("ho_ground")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
