import numpy as np
import pytest

from alrn.model import ModelConfig, init_parameters


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_instance(rng):
    """N_A=4, C=6, 3x3 grid, 3 seen classes plus one unseen, batch of 4."""
    cfg = ModelConfig(num_attributes=4, feature_channels=6)
    params = init_parameters(cfg, 7)
    for _, value in params.items():
        value += rng.normal(scale=0.3, size=value.shape)
    S = rng.uniform(0.0, 1.0, size=(4, 4))
    x = rng.normal(size=(4, 6, 3, 3))
    labels = np.array([0, 1, 2, 1])
    return cfg, params, S, x, labels


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
