import numpy as np
import pytest

from ar2mix.model import MixtureModel
from ar2mix.simulate import scenario1

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, n: int, K: int, noise: float | None = None) -> MixtureModel:
    psi = rng.uniform(0.01, 0.49, K)
    log_mod = np.exp(rng.uniform(np.log(0.01), np.log(1.0), K))
    w = rng.random((n, K)) * (rng.random((n, K)) < 0.7)
    w[np.arange(n), rng.integers(0, K, n)] += 0.1
    w /= np.sqrt((w**2).sum(axis=1, keepdims=True))
    if noise is None:
        noise = float(rng.uniform(0.01, 0.5))
    return MixtureModel.from_arrays(psi, log_mod, w, noise)


def scenario1_model(noise_level: float = 0.02) -> MixtureModel:
    sc = scenario1()
    return MixtureModel.from_arrays((0.005, 0.03, 0.06, 0.3), (0.03,) * 4, sc.mixing, noise_level)
