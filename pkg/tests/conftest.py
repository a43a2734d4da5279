import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from volterra_mfg import ModelSpec  # noqa: E402

settings.register_profile(
    "repo", max_examples=25, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record(number, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[str(number)] = ("PASS" if passed else "FAIL", f"{title}: {detail}" if detail else title)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        status, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{status}] criterion {k:>3s}  {text}")


@pytest.fixture(scope="session")
def lq_model():
    """Constant-coefficient model: b=0, c=1, phi=1, R=10, no noise, no coupling."""
    return ModelSpec(T=1.0, phi=1.0, b=0.0, c=1.0, sigma=0.0, f=0.0, R=10.0, gamma=0.0, eta=0.0, n_steps=64)


@pytest.fixture(scope="session")
def noisy_lq_model():
    return ModelSpec(T=1.0, phi=1.0, b=0.0, c=1.0, sigma=1.0, f=0.0, R=10.0, gamma=0.0, eta=0.0, n_steps=64)


@pytest.fixture(scope="session")
def coupled_model():
    return ModelSpec(T=1.0, phi=1.0, b=0.3, f=0.3, c=1.0, sigma=1.0, R=2.0, gamma=0.5, eta=0.2, n_steps=64)


@pytest.fixture(scope="session")
def smooth_coupled_model():
    return ModelSpec(T=1.0, phi=1.0, b=0.3, f=lambda t, s: 0.3 * np.cos(t - s), c=1.0, sigma=1.0,
                     R=2.0, gamma=0.5, eta=0.2, n_steps=64)
