"""Shared oracles for the test suite.

The helpers here deliberately avoid the package's own forward/backward code
so that they can serve as independent references.
"""

import math

import numpy as np
import pytest


def naive_forward(params, x):
    """Per-sample, per-unit forward pass written with plain Python loops."""
    x = [float(v) for v in x]
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        out = []
        for r in range(W.shape[0]):
            z = float(b[r]) + sum(float(W[r, c]) * x[c] for c in range(W.shape[1]))
            if i < last:
                if params.hidden_activation == "relu":
                    z = max(z, 0.0)
                elif z < 0:
                    z *= params.leaky_slope
            out.append(z)
        x = out
    if params.output_activation == "tanh":
        x = [float(s) * math.tanh(z) for s, z in zip(params.output_scale, x)]
    elif params.output_activation == "sigmoid":
        x = [1.0 / (1.0 + math.exp(-z)) for z in x]
    return np.array(x)


def central_differences(fn, vec, h=1e-5):
    """Central finite differences of scalar ``fn`` at the flat vector ``vec``."""
    vec = np.array(vec, dtype=np.float64)
    out = np.zeros_like(vec)
    for j in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[j] += h
        down[j] -= h
        out[j] = (fn(up) - fn(down)) / (2 * h)
    return out


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Reference scalar Adam, one value per step in ``grads``."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(p)
    return trace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
