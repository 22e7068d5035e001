import sys

import numpy as np
import pytest


def planted_problem(seed=0, m=16, k=5, n=2000, snr_db=20.0):
    """Unit atoms in R^m and 1-sparse noisy samples at the given SNR."""
    rng = np.random.default_rng(seed)
    atoms = rng.normal(size=(m, k))
    atoms /= np.linalg.norm(atoms, axis=0)
    which = rng.integers(0, k, size=n)
    amp = rng.choice([-1.0, 1.0], size=n) * rng.uniform(1.0, 2.0, size=n)
    clean = atoms[:, which] * amp
    signal_power = np.mean(clean ** 2)
    noise_sigma = np.sqrt(signal_power / 10 ** (snr_db / 10))
    return atoms, clean + noise_sigma * rng.normal(size=clean.shape)


@pytest.fixture
def planted():
    return planted_problem()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
