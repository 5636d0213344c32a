import numpy as np
import pytest

from streamgp.kernels import Hyperparams, Matern32, SquaredExponential
from streamgp.online_bounds import next_summary


def sine(x):
    return np.sin(2 * x) + np.cos(5 * x)


def two_step_instance(seed, n1=30, n2=30, m_a=4, dim=1, noise=0.2, kernel=None):
    """A summary built from a first batch plus an unseen second batch."""
    rng = np.random.default_rng(seed)
    X1 = rng.uniform(0, 5, size=(n1, dim))
    X2 = rng.uniform(2, 7, size=(n2, dim))
    y1 = sine(X1[:, 0]) + 0.3 * rng.standard_normal(n1)
    y2 = sine(X2[:, 0]) + 0.3 * rng.standard_normal(n2)
    kernel = kernel or SquaredExponential(1.0, 0.3)
    theta = Hyperparams(kernel, noise)
    Zo = X1[rng.choice(n1, size=m_a, replace=False)]
    summary = next_summary(None, X1, y1, Zo, theta)
    return summary, X2, y2, theta


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


KERNELS = [
    SquaredExponential(1.3, 0.7),
    Matern32(0.8, 1.1),
]


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
