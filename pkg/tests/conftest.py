import sys

import numpy as np
import pytest

from twinsight.numerics import MlpSpec, ModelParams, init_params


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function over a float array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(a - b) / scale


def random_params(rng, widths, activation="tanh", head="classifier"):
    spec = MlpSpec(tuple(widths), activation, head)
    p = init_params(spec, rng)
    # non-zero biases so every path is exercised
    return ModelParams(spec, p.values + 0.1 * rng.normal(size=p.values.size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
