import math

import numpy as np
import pytest

from biphoton.config import build

ACCEPTANCE_LINES = []


def record(criterion: int, passed: bool, detail: str):
    line = f"acceptance {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unbalanced():
    run = build({"preset": "paper-unbalanced"})
    return run.src, run.det, run.cfg


@pytest.fixture(scope="session")
def perfect():
    run = build({"preset": "paper-balanced-perfect"})
    return run.src, run.det, run.cfg


@pytest.fixture(scope="session")
def rough():
    run = build({"preset": "paper-balanced-rough"})
    return run.src, run.det, run.cfg


LOCK_THETAS = [math.acos(j / 4) for j in range(-4, 5)]


def brute_gamma_ave(tau, src, det, n_range=200):
    """Direct extended-precision summation over n in [-n_range, n_range]."""
    ld = np.longdouble
    tau = np.asarray(tau, dtype=ld)
    a = ld(2) * np.log(ld(2)) / ld(det.t_d)
    n = np.arange(-n_range, n_range + 1, dtype=ld)
    u = np.abs(tau[:, None] - n[None, :] * ld(src.tau_r) - ld(det.tau_0))
    s = np.sum((1 + a * u) * np.exp(-a * u), axis=1)
    return np.exp(-ld(src.delta_omega_opo) * np.abs(tau - ld(det.tau_0))) * s
