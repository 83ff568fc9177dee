import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frcimpact.panel import MarketPanel
from frcimpact.simulation import business_days

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_panel(df, dq, start="2015-01-01"):
    df = np.asarray(df, float)
    return MarketPanel(business_days(start, df.shape[0]), df, np.asarray(dq, float))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, jitter=0.1):
    b = rng.standard_normal((n, n))
    return b @ b.T + jitter * np.eye(n)


def random_corr(rng, n):
    s = random_spd(rng, n)
    d = np.sqrt(np.diag(s))
    c = s / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return 0.5 * (c + c.T)


# criterion number -> one-line PASS/FAIL report, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
