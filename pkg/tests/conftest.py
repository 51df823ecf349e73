import numpy as np
import pytest

from hgcd import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_grad(f, x, h=1e-5):
    """Independent central-difference oracle on a plain numpy function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def grad_of(build, x):
    t = ad.Tensor(x, requires_grad=True)
    build(t).backward()
    return t.grad


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
