import numpy as np
import pytest

from cointexec import MarketModel, PenaltySpec, nasdaq_model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def nasdaq():
    return nasdaq_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_model(a=0.5, kappa=0.0, sigma=1.0, b=0.0, theta=10.0):
    return MarketModel(kappa=[[kappa]], theta=[theta], sigma_cov=[[sigma]], a_temp=[[a]],
                       b_perm=[[b]])


def random_spd(rng, k, scale=1.0, floor=0.1):
    A = rng.standard_normal((k, k))
    return scale * (A @ A.T / k + floor * np.eye(k))


def random_model(rng, n=3, m=2, b_bar=True):
    """Small well-conditioned model with mean reversion and optional order-flow impact."""
    kap = random_spd(rng, n, floor=0.5)
    return MarketModel(kappa=kap, theta=rng.uniform(5, 10, n), sigma_cov=random_spd(rng, n),
                       a_temp=np.diag(rng.uniform(0.5, 2.0, m)),
                       b_bar=0.3 * rng.standard_normal((n, n)) if b_bar else None)
