import numpy as np
import pytest

from coopsync.geometry import ApertureState, ArrayConfig


def random_state(rng, scale=3.0):
    return ApertureState(rng.uniform(-scale, scale, 3),
                         [rng.uniform(-np.pi, np.pi), rng.uniform(-1.2, 1.2), rng.uniform(-np.pi, np.pi)],
                         rng.uniform(-0.5, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    # N = 2 * 2^2 * 1^2 = 8
    return ArrayConfig.ura(n_freqs=2, bandwidth=500e6, carrier=6.175e9, n_y=2, n_z=1)


@pytest.fixture
def small_cfg():
    # N = 4 * 3^2 * 3^2 = 324
    return ArrayConfig.ura(n_freqs=4, bandwidth=500e6, carrier=6.175e9, n_y=3, n_z=3)


@pytest.fixture(scope="session")
def full_cfg():
    return ArrayConfig.ura(n_freqs=10, bandwidth=500e6, carrier=6.175e9, n_y=4, n_z=4)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
