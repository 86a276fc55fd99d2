import numpy as np
import pytest
from hypothesis import settings

from pufvar.fabric import generate_design

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


def small_design(seed=1, **kw):
    """A design of roughly 110-140 paths."""
    params = dict(n_layers=3, luts_per_layer=6, n_inputs=6, n_outputs=2, target_path_count=100)
    params.update(kw)
    return generate_design(seed=seed, **params)


@pytest.fixture(scope="session")
def tiny_design():
    return small_design(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
