import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridcert.cert import synthesize
from hybridcert.conditions import CertificateTemplate
from hybridcert.model import rimless_wheel

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def wheel():
    return rimless_wheel()


@pytest.fixture(scope="session")
def solved(wheel):
    """The default-preset synthesis (lambda 0.05), shared by the slower tests."""
    res = synthesize(wheel, CertificateTemplate(lam=0.05))
    assert res.certificate is not None, res.solution.message
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
