import os

import numpy as np
import pytest

from digitnet.mnist import load_split

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "tests", "fixtures", "mini")
MNIST5K = os.path.join(ROOT, "data", "mnist5k")
MNIST_DIR = os.environ.get("MNIST_DIR")


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.fixture(scope="session")
def mini_train():
    return load_split(FIXTURES, "train")


@pytest.fixture(scope="session")
def mini_test():
    return load_split(FIXTURES, "test")


@pytest.fixture(scope="session")
def real5k():
    return load_split(MNIST5K, "train"), load_split(MNIST5K, "test")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
