import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lstmiss.lstm import LstmParams, random_params
from lstmiss.signals import substream
from lstmiss.stability import iss_check

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def scalar_step(p: LstmParams, x, xi, u):
    """Loop-and-math oracle for one LSTM step."""
    nx, nu = p.nx, p.nu

    def pre(g, r):
        W, U, b = getattr(p, f"W{g}"), getattr(p, f"U{g}"), getattr(p, f"b{g}")
        return sum(W[r, j] * u[j] for j in range(nu)) + sum(U[r, j] * xi[j] for j in range(nx)) + b[r]

    sg = lambda t: 1.0 / (1.0 + math.exp(-t))  # noqa: E731
    x_new, xi_new = [], []
    for r in range(nx):
        xr = sg(pre("f", r)) * x[r] + sg(pre("i", r)) * math.tanh(pre("c", r))
        x_new.append(xr)
        xi_new.append(sg(pre("o", r)) * math.tanh(xr))
    return np.array(x_new), np.array(xi_new)


def certified_random(nx, nu, ny, seed, delta_min=1e-3):
    """Random net shrunk until it passes the certificate."""
    rng = substream(seed, 99)
    scale = 1.5
    while True:
        p = random_params(nx, nu, ny, scale, rng)
        if iss_check(p).delta > delta_min:
            return p
        scale *= 0.8


@pytest.fixture
def zero1():
    return LstmParams.zeros(1, 1, 1)



ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
